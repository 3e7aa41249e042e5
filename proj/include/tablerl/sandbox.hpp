#pragma once

#include <csignal>
#include <cstring>
#include <string>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "tablerl/reward.hpp"
#include "tablerl/table_env.hpp"
#include "tablerl/types.hpp"

namespace tablerl::env {

// ----------------------------------------------------------------------------
// External sandbox executor: a child process that consumes a code string on
// stdin and emits {"status": "success"|"error", "payload": "..."} as one JSON
// object on stdout. Used for real-code task types instead of the DSL replay.
// ----------------------------------------------------------------------------

/// Runs `command` through /bin/sh, feeding `code` on stdin. Throws
/// ExecutionTimeout when the deadline passes; other failures come back as
/// Error observations.
inline Observation run_sandbox(const std::string& command, const std::string& code,
                               double timeout_s) {
    static const bool sigpipe_ignored = [] {
        std::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)sigpipe_ignored;

    int in_pipe[2];
    int out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0)
        return {ObsStatus::Error, "SandboxError: cannot create pipes"};

    pid_t pid = fork();
    if (pid < 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
        return {ObsStatus::Error, "SandboxError: fork failed"};
    }
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }

    close(in_pipe[0]);
    close(out_pipe[1]);

    size_t written = 0;
    while (written < code.size()) {
        ssize_t n = write(in_pipe[1], code.data() + written, code.size() - written);
        if (n <= 0) break;
        written += static_cast<size_t>(n);
    }
    close(in_pipe[1]);

    std::string output;
    const int deadline_ms = static_cast<int>(timeout_s * 1000);
    int waited_ms = 0;
    bool timed_out = false;
    char buf[4096];
    while (true) {
        pollfd pfd{out_pipe[0], POLLIN, 0};
        int step = 50;
        int r = poll(&pfd, 1, step);
        if (r > 0 && (pfd.revents & (POLLIN | POLLHUP))) {
            ssize_t n = read(out_pipe[0], buf, sizeof(buf));
            if (n > 0) {
                output.append(buf, static_cast<size_t>(n));
                continue;
            }
            break;  // EOF
        }
        waited_ms += step;
        if (waited_ms >= deadline_ms) {
            timed_out = true;
            break;
        }
    }
    close(out_pipe[0]);

    if (timed_out) {
        kill(pid, SIGKILL);
        waitpid(pid, nullptr, 0);
        throw ExecutionTimeout(command);
    }
    int status = 0;
    waitpid(pid, &status, 0);

    nlohmann::json j = nlohmann::json::parse(output, nullptr, false);
    if (j.is_discarded() || !j.contains("status"))
        return {ObsStatus::Error, "SandboxError: malformed sandbox reply"};
    std::string st = j["status"].get<std::string>();
    std::string payload = j.value("payload", "");
    if (st == "success") return {ObsStatus::Success, payload};
    return {ObsStatus::Error, payload.empty() ? "SandboxError: execution failed" : payload};
}

/// Run hook that forwards the trajectory's final code block to the sandbox.
inline reward::RunHook make_sandbox_run_hook(std::string command, double timeout_s = 5.0) {
    return [command = std::move(command), timeout_s](
               const traj::Trajectory& t, const env::TaskSpec&) -> Observation {
        const traj::Segment* last_call = nullptr;
        for (const traj::Segment& seg : t.segments)
            if (seg.kind == traj::SegmentKind::ToolCall) last_call = &seg;
        if (!last_call) return {ObsStatus::Error, "SandboxError: trajectory has no code"};
        return run_sandbox(command, last_call->content, timeout_s);
    };
}

}  // namespace tablerl::env
