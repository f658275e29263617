#include "mira/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "mira/checkpoint.hpp"
#include "mira/pipeline.hpp"

namespace mira {

namespace {

TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    TrainConfig cfg = train_config_from_json(ss.str());
    if (const char* env = std::getenv("MIRA_SEED")) {
        cfg.seed = std::strtoull(env, nullptr, 10);
    }
    return cfg;
}

void write_outputs(const std::string& out_dir, const EvalReport& report) {
    std::filesystem::create_directories(out_dir);
    write_metrics_csv(out_dir + "/metrics.csv", report);
    write_report_json(out_dir + "/report.json", report);
}

int cmd_run(const std::string& setting, const std::string& config_path, long long seed_override,
            const std::string& out_dir, const std::string& checkpoint_out, bool baseline) {
    TrainConfig cfg = load_config_file(config_path);
    cfg.setting = setting_from_string(setting);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    TaskStream stream = make_stream(cfg.setting, cfg.stream, cfg.seed);
    EvalReport report;
    if (baseline) {
        report = run_baseline(stream, cfg);
    } else if (!checkpoint_out.empty()) {
        ModelState st;
        report = run_mira(stream, cfg, &st);
        save_checkpoint(st, checkpoint_out);
    } else {
        report = run_mira(stream, cfg);
    }
    write_outputs(out_dir, report);
    std::cout << "final_avg_acc " << report.final_avg_acc << "\n";
    if (report.forgetting_value) std::cout << "forgetting " << *report.forgetting_value << "\n";
    return 0;
}

int cmd_adapt(const std::string& config_path, const std::string& checkpoint_in,
              const std::string& checkpoint_out, int task, long long seed_override) {
    ModelState st;
    if (!checkpoint_in.empty()) {
        st = load_checkpoint(checkpoint_in);
    } else {
        if (config_path.empty()) throw config_error("adapt needs --config or --checkpoint-in");
        TrainConfig cfg = load_config_file(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
        TaskStream stream0 = make_stream(cfg.setting, cfg.stream, cfg.seed);
        st = init_model_state(cfg, stream0);
    }
    const TrainConfig cfg = st.cfg;
    TaskStream stream = make_stream(cfg.setting, cfg.stream, cfg.seed);
    if (task >= 0) {
        mira_adapt_task(stream, cfg, st, task);
    } else if (cfg.setting == Setting::DG) {
        for (int t = st.tasks_adapted; t < stream.task_count(); ++t)
            mira_adapt_task(stream, cfg, st, t);
    } else {
        mira_adapt_task(stream, cfg, st, st.tasks_adapted);
    }
    save_checkpoint(st, checkpoint_out);
    std::cout << "tasks_adapted " << st.tasks_adapted << "\n";
    return 0;
}

int cmd_consolidate(const std::string& checkpoint_in, const std::string& checkpoint_out, int task,
                    const std::string& out_dir) {
    ModelState st = load_checkpoint(checkpoint_in);
    const TrainConfig cfg = st.cfg;
    TaskStream stream = make_stream(cfg.setting, cfg.stream, cfg.seed);
    for (int t = 0; t < st.tasks_consolidated; ++t) {
        if (cfg.setting != Setting::DG) stream.complete_task(t);
    }
    if (task >= 0) {
        mira_consolidate_task(stream, cfg, st, task);
    } else if (cfg.setting == Setting::DG) {
        for (int t = st.tasks_consolidated; t < stream.task_count(); ++t)
            mira_consolidate_task(stream, cfg, st, t);
    } else {
        mira_consolidate_task(stream, cfg, st, st.tasks_consolidated);
    }
    if (!checkpoint_out.empty()) save_checkpoint(st, checkpoint_out);
    if (!out_dir.empty()) {
        check_contract(st.matrix.steps() >= 1, "no evaluation rows recorded yet");
        write_outputs(out_dir, report_from_state(st));
    }
    std::cout << "tasks_consolidated " << st.tasks_consolidated << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& stream_path,
             const std::string& out_dir) {
    ModelState st = load_checkpoint(checkpoint_path);
    std::vector<TaskDataset> domains = import_domains_csv(stream_path);
    StreamSpec spec = st.cfg.stream;
    spec.num_domains = static_cast<int>(domains.size());
    spec.input_dim = domains[0].features.cols();
    {
        std::set<int> classes;
        for (const TaskDataset& d : domains) classes.insert(d.label_set.begin(), d.label_set.end());
        spec.num_classes = static_cast<int>(classes.size());
    }
    TaskStream stream = build_stream(st.cfg.setting, domains, spec, st.cfg.seed);
    check_contract(stream.input_dim == st.bcfg.input_dim,
                   "stream feature dimension does not match the checkpointed model");
    AccuracyMatrix m;
    std::vector<double> row;
    for (const TaskDataset& test : stream.test_splits) {
        row.push_back(evaluate_dataset(st, test));
    }
    m.append_row(row);
    EvalReport report = EvalReport::from_matrix(st.cfg.setting, m);
    report.seed = st.cfg.seed;
    report.config_json = train_config_to_json(st.cfg);
    for (size_t j = 0; j < row.size(); ++j) std::cout << "task " << j << " acc " << row[j] << "\n";
    std::cout << "avg_acc " << report.final_avg_acc << "\n";
    if (!out_dir.empty()) write_outputs(out_dir, report);
    return 0;
}

int cmd_inspect(const std::string& checkpoint_path) {
    ModelState st = load_checkpoint(checkpoint_path);
    nlohmann::json out;
    out["setting"] = to_string(st.cfg.setting);
    out["tasks_adapted"] = st.tasks_adapted;
    out["tasks_consolidated"] = st.tasks_consolidated;
    out["degenerate_reads"] = st.diag.degenerate_reads;

    // Probe inputs for retrieval statistics: a slice of the synthetic test
    // split regenerated from the config.
    std::vector<Tensor> probes;
    if (st.tasks_adapted > 0) {
        TaskStream stream = make_stream(st.cfg.setting, st.cfg.stream, st.cfg.seed);
        for (const TaskDataset& test : stream.test_splits) {
            for (int i = 0; i < test.size() && static_cast<int>(probes.size()) < 64; ++i) {
                probes.push_back(kernels::slice_rows(test.features, i, i + 1));
            }
        }
    }

    nlohmann::json layers = nlohmann::json::array();
    std::vector<std::vector<double>> entropies(st.memories.size());
    if (!probes.empty() && !st.head.empty() && st.memories[0].count() > 0) {
        std::vector<const Tensor*> ws, bs;
        for (const HeadBlock& blk : st.head) {
            ws.push_back(&blk.weight.value);
            bs.push_back(&blk.bias.value);
        }
        const Tensor head_w = kernels::concat_cols(ws);
        const Tensor head_b = kernels::concat_cols(bs);
        for (const Tensor& x : probes) {
            SampleTrace trace;
            inference_forward(st.bcfg, st.frozen, st.memories, st.queries, head_w, head_b, x,
                              &trace);
            for (size_t l = 0; l < trace.layers.size(); ++l) {
                const Tensor& w = trace.layers[l].weights;
                double norm = 0.0;
                for (std::int64_t i = 0; i < w.size(); ++i) norm += std::fabs(w[i]);
                double h = 0.0;
                if (norm > 0.0) {
                    for (std::int64_t i = 0; i < w.size(); ++i) {
                        const double p = std::fabs(w[i]) / norm;
                        if (p > 0.0) h -= p * std::log(p);
                    }
                }
                entropies[l].push_back(h);
            }
        }
    }
    for (size_t l = 0; l < st.memories.size(); ++l) {
        const MemoryUnit& mem = st.memories[l];
        nlohmann::json entry;
        entry["layer"] = mem.layer_index;
        entry["count"] = mem.count();
        std::vector<double> norms;
        for (int c = 0; c < mem.count(); ++c) {
            double s = 0.0;
            for (int r = 0; r < mem.key_dim; ++r) s += mem.keys.value.at(r, c) * mem.keys.value.at(r, c);
            norms.push_back(std::sqrt(s));
        }
        entry["key_norms"] = norms;
        if (!entropies[l].empty()) {
            double mean = 0.0;
            for (double h : entropies[l]) mean += h;
            entry["mean_retrieval_weight_entropy"] = mean / entropies[l].size();
        }
        layers.push_back(entry);
    }
    out["layers"] = layers;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_selftest() {
    int failures = 0;
    auto check = [&failures](const char* name, bool ok) {
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
        if (!ok) ++failures;
    };

    // Softmax normalization.
    {
        bool ok = true;
        for (int trial = 0; trial < 50 && ok; ++trial) {
            auto rng = make_rng(7, "selftest-softmax", trial);
            Tensor x = uniform_tensor(rng, 1, 8, -1e3, 1e3);
            const Tensor y = kernels::softmax_rows(x);
            ok = std::fabs(kernels::sum_all(y)[0] - 1.0) < 1e-12;
        }
        check("softmax rows sum to one", ok);
    }

    // Memory read against a direct weighted-combination loop.
    {
        bool ok = true;
        for (int trial = 0; trial < 50 && ok; ++trial) {
            auto rng = make_rng(11, "selftest-read", trial);
            const int d_k = 2 + static_cast<int>(rng() % 7);
            const int d_v = 2 + static_cast<int>(rng() % 31);
            const int n = 1 + static_cast<int>(rng() % 16);
            MemoryUnit mem(0, d_k, d_v, SeparationSpec{SepKind::Softmax, 1.0});
            for (int c = 0; c < n; ++c) {
                AdapterVector theta;
                theta.layer_index = 0;
                theta.flat = gaussian_tensor(rng, 1, d_v, 1.0);
                write(mem, gaussian_tensor(rng, d_k, 1, 1.0), theta);
            }
            const Tensor q = gaussian_tensor(rng, 1, d_k, 1.0);
            auto [value, weights] = read(mem, q);
            for (int r = 0; r < d_v && ok; ++r) {
                double acc = 0.0;
                for (int c = 0; c < n; ++c) acc += mem.values.at(r, c) * weights.weights.at(0, c);
                ok = std::fabs(acc - value.flat[r]) < 1e-12;
            }
        }
        check("memory read matches direct evaluation", ok);
    }

    // Projector idempotence and orthogonality.
    {
        bool ok = true;
        for (int trial = 0; trial < 50 && ok; ++trial) {
            auto rng = make_rng(13, "selftest-proj", trial);
            const int d = 4 + static_cast<int>(rng() % 5);
            GradientSubspace sub = make_subspace("selftest", d, 0.7);
            std::vector<Tensor> grads;
            for (int i = 0; i < 12; ++i) grads.push_back(gaussian_tensor(rng, d, 1, 1.0));
            accumulate(sub, grads);
            update_basis(sub);
            const Tensor g = gaussian_tensor(rng, d, 1, 1.0);
            const Tensor p1 = project_gradient(g, sub);
            const Tensor p2 = project_gradient(p1, sub);
            ok = kernels::sub(p1, p2).max_abs() < 1e-12 &&
                 kernels::matmul_tn(sub.basis, p1).max_abs() < 1e-8;
        }
        check("gradient projector idempotent and orthogonal", ok);
    }

    // Checkpoint round trip on a fresh state.
    {
        TrainConfig cfg;
        cfg.stream.num_classes = 4;
        cfg.stream.num_domains = 2;
        cfg.stream.samples_per_class = 8;
        cfg.stream.input_dim = 8;
        cfg.backbone.model_dim = 8;
        cfg.backbone.input_dim = 8;
        cfg.backbone.num_heads = 2;
        TaskStream stream = make_stream(cfg.setting, cfg.stream, cfg.seed);
        ModelState st = init_model_state(cfg, stream);
        const auto path = std::filesystem::temp_directory_path() / "mira_selftest.ckpt";
        save_checkpoint(st, path.string());
        ModelState loaded = load_checkpoint(path.string());
        std::filesystem::remove(path);
        check("checkpoint round trip preserves the backbone",
              loaded.backbone_checksum() == st.backbone_checksum());
    }

    return failures == 0 ? 0 : 2;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"MIRA: memory-indexed retrieval of adapters"};
    app.require_subcommand(1);

    std::string setting, config_path, out_dir, checkpoint_in, checkpoint_out, stream_path;
    long long seed_override = -1;
    int task = -1;
    bool baseline = false;

    auto* run = app.add_subcommand("run", "Full two-stage pipeline over a synthetic stream");
    run->add_option("--setting", setting, "dg, dil, or cil")->required();
    run->add_option("--config", config_path, "JSON config file")->required();
    run->add_option("--seed", seed_override, "Seed override");
    run->add_option("--out", out_dir, "Output directory")->required();
    run->add_option("--checkpoint-out", checkpoint_out, "Save the final model state");
    run->add_flag("--baseline", baseline, "Run the naive sequential fine-tuning baseline");

    auto* adapt = app.add_subcommand("adapt", "Run the Adaptation stage (checkpoint out)");
    adapt->add_option("--config", config_path, "JSON config (fresh state)");
    adapt->add_option("--checkpoint-in", checkpoint_in, "Resume from a checkpoint");
    adapt->add_option("--checkpoint-out", checkpoint_out, "Checkpoint to write")->required();
    adapt->add_option("--task", task, "Task index (default: next pending; DG: all)");
    adapt->add_option("--seed", seed_override, "Seed override (fresh state only)");

    auto* cons = app.add_subcommand("consolidate", "Run the Consolidation stage (checkpoint in/out)");
    cons->add_option("--checkpoint-in", checkpoint_in, "Checkpoint to resume")->required();
    cons->add_option("--checkpoint-out", checkpoint_out, "Checkpoint to write");
    cons->add_option("--task", task, "Task index (default: next pending; DG: all)");
    cons->add_option("--out", out_dir, "Write metrics.csv / report.json here");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on an external stream CSV");
    eval->add_option("--checkpoint", checkpoint_in, "Checkpoint file")->required();
    eval->add_option("--stream", stream_path, "Stream CSV (f0..fD-1,label,domain)")->required();
    eval->add_option("--out", out_dir, "Write metrics.csv / report.json here");

    auto* inspect = app.add_subcommand("inspect", "Dump memory statistics for a checkpoint");
    inspect->add_option("--checkpoint", checkpoint_in, "Checkpoint file")->required();

    app.add_subcommand("selftest", "Run the built-in invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (run->parsed()) {
            return cmd_run(setting, config_path, seed_override, out_dir, checkpoint_out, baseline);
        }
        if (adapt->parsed()) {
            return cmd_adapt(config_path, checkpoint_in, checkpoint_out, task, seed_override);
        }
        if (cons->parsed()) {
            return cmd_consolidate(checkpoint_in, checkpoint_out, task, out_dir);
        }
        if (eval->parsed()) {
            return cmd_eval(checkpoint_in, stream_path, out_dir);
        }
        if (inspect->parsed()) {
            return cmd_inspect(checkpoint_in);
        }
        return cmd_selftest();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace mira
