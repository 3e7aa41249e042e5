// tablerl command-line driver: task generation, data curation, rollouts,
// staged RL training, reward scoring, and SFT subset export.

#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tablerl/commands.hpp"
#include "tablerl/judge_http.hpp"

namespace {

using namespace tablerl;

std::unique_ptr<judge::Judge> build_judge(bool mock, const std::string& judge_endpoint,
                                          const std::string& teacher_endpoint) {
    if (mock || judge_endpoint.empty()) return std::make_unique<judge::MockJudge>();
    judge::EndpointConfig cfg =
        cli::read_json_file(judge_endpoint).get<judge::EndpointConfig>();
    std::shared_ptr<judge::Teacher> teacher;
    if (!teacher_endpoint.empty()) {
        judge::EndpointConfig tcfg =
            cli::read_json_file(teacher_endpoint).get<judge::EndpointConfig>();
        teacher = std::make_shared<judge::HttpTeacher>(tcfg);
    } else {
        teacher = std::make_shared<judge::MockTeacher>();
    }
    return std::make_unique<judge::HttpJudge>(cfg, teacher);
}

reward::RegConfig load_reg(const std::string& path) {
    if (path.empty()) return {};
    try {
        return cli::read_json_file(path).get<reward::RegConfig>();
    } catch (const cli::ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw cli::ConfigError(std::string("invalid penalty config: ") + e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale table-agent RL stack: data curation, task-adaptive "
                 "rewards, and staged policy optimization over a synthetic table "
                 "environment"};
    app.require_subcommand(1);

    // ---- gen-tasks ----
    cli::GenTasksConfig gen_cfg;
    CLI::App* gen = app.add_subcommand("gen-tasks", "Generate a synthetic task corpus");
    gen->add_option("--tasks-out", gen_cfg.tasks_out, "Task corpus output (JSONL)")
        ->required();
    gen->add_option("--records-out", gen_cfg.records_out,
                    "Optional dataset-record output for the pipeline (JSONL)");
    gen->add_option("--table-dir", gen_cfg.table_dir, "Directory for CSV table files");
    gen->add_option("--count", gen_cfg.count, "Number of tasks");
    gen->add_option("--seed", gen_cfg.seed, "Root seed");

    // ---- pipeline ----
    cli::PipelineCmdConfig pipe_cfg;
    std::string pipe_judge_endpoint, pipe_teacher_endpoint;
    CLI::App* pipe = app.add_subcommand("pipeline", "Run the data-curation pipeline");
    pipe->add_option("--in", pipe_cfg.in, "Input corpus (JSONL)")->required();
    pipe->add_option("--out", pipe_cfg.out, "Surviving corpus (JSONL)")->required();
    pipe->add_option("--report", pipe_cfg.report_out, "Stage report (JSON)");
    pipe->add_option("--seed", pipe_cfg.seed, "Root seed");
    pipe->add_option("--jobs", pipe_cfg.jobs, "Worker threads");
    pipe->add_flag("--mock-judge", pipe_cfg.mock_judge, "Use the offline mock judge");
    pipe->add_option("--judge-endpoint", pipe_judge_endpoint, "Judge endpoint config (JSON)");
    pipe->add_option("--teacher-endpoint", pipe_teacher_endpoint,
                     "Criteria teacher endpoint config (JSON)");
    pipe->add_option("--length-limit", pipe_cfg.stages.length_limit, "Token gate");
    pipe->add_option("--quality-threshold", pipe_cfg.stages.quality_threshold,
                     "Quality gate on [0,1]");

    // ---- rollout ----
    cli::RolloutCmdConfig roll_cfg;
    CLI::App* roll = app.add_subcommand("rollout", "Sample trajectory groups from a policy");
    roll->add_option("--tasks", roll_cfg.tasks, "Task corpus (JSONL)")->required();
    roll->add_option("--out", roll_cfg.out, "Trajectory output (JSONL)")->required();
    roll->add_option("--policy", roll_cfg.policy_ckpt, "Policy checkpoint (JSON)");
    roll->add_option("--group", roll_cfg.group_size, "Rollouts per task (G)");
    roll->add_option("--budget", roll_cfg.budget, "Max turns per rollout");
    roll->add_option("--seed", roll_cfg.seed, "Root seed");

    // ---- train ----
    cli::TrainCmdConfig train_cfg;
    std::string train_reg_path, train_judge_endpoint, train_teacher_endpoint;
    CLI::App* train = app.add_subcommand("train", "Run the staged RL curriculum");
    train->add_option("--tasks", train_cfg.tasks, "Task corpus (JSONL)")->required();
    train->add_option("--plan", train_cfg.plan, "Stage plan (JSON); defaults to 3 stages");
    train->add_option("--out-dir", train_cfg.out_dir, "Output directory");
    train->add_option("--seed", train_cfg.seed, "Root seed");
    train->add_option("--jobs", train_cfg.jobs, "Worker threads for pass@k filtering");
    train->add_flag("--mock-judge", train_cfg.mock_judge, "Use the offline mock judge");
    train->add_option("--judge-endpoint", train_judge_endpoint, "Judge endpoint config (JSON)");
    train->add_option("--teacher-endpoint", train_teacher_endpoint,
                      "Criteria teacher endpoint config (JSON)");
    train->add_option("--penalties", train_reg_path, "Regularization config (JSON)");

    // ---- score ----
    cli::ScoreCmdConfig score_cfg;
    std::string score_reg_path, score_judge_endpoint, score_teacher_endpoint;
    CLI::App* score = app.add_subcommand("score", "Score trajectories into reward breakdowns");
    score->add_option("--in", score_cfg.in, "Trajectory records (JSONL)")->required();
    score->add_option("--tasks", score_cfg.tasks, "Task corpus (JSONL)")->required();
    score->add_option("--out", score_cfg.out, "Breakdown output (JSONL)")->required();
    score->add_flag("--mock-judge", score_cfg.mock_judge, "Use the offline mock judge");
    score->add_option("--judge-endpoint", score_judge_endpoint, "Judge endpoint config (JSON)");
    score->add_option("--teacher-endpoint", score_teacher_endpoint,
                      "Criteria teacher endpoint config (JSON)");
    score->add_option("--penalties", score_reg_path, "Regularization config (JSON)");

    // ---- sft-export ----
    cli::SftExportConfig sft_cfg;
    CLI::App* sft = app.add_subcommand("sft-export", "Export the SFT warm-up subset");
    sft->add_option("--in", sft_cfg.in, "Curated corpus (JSONL)")->required();
    sft->add_option("--out", sft_cfg.out, "Subset output (JSONL)")->required();
    sft->add_option("--fraction", sft_cfg.fraction, "Subset fraction of the corpus");
    sft->add_option("--seed", sft_cfg.seed, "Root seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? tablerl::cli::kExitOk : tablerl::cli::kExitConfig;
    }

    try {
        if (gen->parsed()) return cli::cmd_gen_tasks(gen_cfg);
        if (pipe->parsed()) {
            auto j = build_judge(pipe_cfg.mock_judge, pipe_judge_endpoint,
                                 pipe_teacher_endpoint);
            return cli::cmd_pipeline(pipe_cfg, j.get());
        }
        if (roll->parsed()) return cli::cmd_rollout(roll_cfg);
        if (train->parsed()) {
            train_cfg.reg = load_reg(train_reg_path);
            auto j = build_judge(train_cfg.mock_judge, train_judge_endpoint,
                                 train_teacher_endpoint);
            return cli::cmd_train(train_cfg, j.get());
        }
        if (score->parsed()) {
            score_cfg.reg = load_reg(score_reg_path);
            auto j = build_judge(score_cfg.mock_judge, score_judge_endpoint,
                                 score_teacher_endpoint);
            return cli::cmd_score(score_cfg, j.get());
        }
        if (sft->parsed()) return cli::cmd_sft_export(sft_cfg);
    } catch (const cli::ConfigError& e) {
        std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
        return cli::kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
        return cli::kExitRuntime;
    }
    return cli::kExitConfig;
}
