#include "mira/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"

namespace mira {

void TrainConfig::validate() const {
    check_config(lora_rank >= 1, "lora_rank must be >= 1");
    check_config(adapt_epochs >= 1, "adapt_epochs must be >= 1");
    check_config(consolidate_epochs >= 0, "consolidate_epochs must be >= 0");
    check_config(lr_adapt > 0.0 && lr_consolidate > 0.0, "learning rates must be positive");
    check_config(weight_decay >= 0.0, "weight_decay must be non-negative");
    check_config(resolved_sigma2() >= 0.0, "sigma2 must be non-negative");
    check_config(adapters_per_task >= 1, "adapters_per_task must be >= 1");
    check_config(softmax_beta > 0.0, "softmax_beta must be positive");
    check_config(key_dim >= 0, "key_dim must be non-negative");
    check_config(dual_gpm_eps > 0.0 && dual_gpm_eps <= 1.0, "dual_gpm_eps must be in (0, 1]");
    check_config(batch_size >= 1, "batch_size must be >= 1");
    stream.validate(setting);
}

std::string train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["setting"] = to_string(cfg.setting);
    j["lora_rank"] = cfg.lora_rank;
    j["adapt_epochs"] = cfg.adapt_epochs;
    j["consolidate_epochs"] = cfg.consolidate_epochs;
    j["lr_adapt"] = cfg.lr_adapt;
    j["lr_consolidate"] = cfg.lr_consolidate;
    j["weight_decay"] = cfg.weight_decay;
    j["sigma2"] = cfg.sigma2;
    j["adapters_per_task"] = cfg.adapters_per_task;
    j["sep_kind"] = to_string(cfg.sep_kind);
    j["softmax_beta"] = cfg.softmax_beta;
    j["query_kind"] = to_string(cfg.query_kind);
    j["key_dim"] = cfg.key_dim;
    j["head_every_task"] = cfg.head_every_task;
    j["dual_gpm"] = cfg.dual_gpm;
    j["dual_gpm_eps"] = cfg.dual_gpm_eps;
    j["project_keys"] = cfg.project_keys;
    j["project_queries"] = cfg.project_queries;
    j["replica_data_shard"] = cfg.replica_data_shard;
    j["dg_mixed_batches"] = cfg.dg_mixed_batches;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["backbone"] = {{"num_layers", cfg.backbone.num_layers},
                     {"model_dim", cfg.backbone.model_dim},
                     {"num_heads", cfg.backbone.num_heads},
                     {"input_dim", cfg.backbone.input_dim},
                     {"num_classes", cfg.backbone.num_classes},
                     {"seq_len", cfg.backbone.seq_len},
                     {"lora_alpha", cfg.backbone.lora_alpha}};
    j["stream"] = {{"num_classes", cfg.stream.num_classes},
                   {"num_domains", cfg.stream.num_domains},
                   {"samples_per_class", cfg.stream.samples_per_class},
                   {"domain_shift", cfg.stream.domain_shift},
                   {"input_dim", cfg.stream.input_dim},
                   {"noise_stddev", cfg.stream.noise_stddev},
                   {"test_fraction", cfg.stream.test_fraction},
                   {"cil_num_tasks", cfg.stream.cil_num_tasks},
                   {"dg_holdout_domain", cfg.stream.dg_holdout_domain}};
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("invalid config JSON: ") + e.what());
    }
    TrainConfig cfg;
    try {
        if (j.contains("setting")) cfg.setting = setting_from_string(j["setting"]);
        cfg.lora_rank = j.value("lora_rank", cfg.lora_rank);
        cfg.adapt_epochs = j.value("adapt_epochs", cfg.adapt_epochs);
        cfg.consolidate_epochs = j.value("consolidate_epochs", cfg.consolidate_epochs);
        cfg.lr_adapt = j.value("lr_adapt", cfg.lr_adapt);
        cfg.lr_consolidate = j.value("lr_consolidate", cfg.lr_consolidate);
        cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
        cfg.sigma2 = j.value("sigma2", cfg.sigma2);
        cfg.adapters_per_task = j.value("adapters_per_task", cfg.adapters_per_task);
        if (j.contains("sep_kind")) cfg.sep_kind = sep_kind_from_string(j["sep_kind"]);
        cfg.softmax_beta = j.value("softmax_beta", cfg.softmax_beta);
        if (j.contains("query_kind")) cfg.query_kind = query_kind_from_string(j["query_kind"]);
        cfg.key_dim = j.value("key_dim", cfg.key_dim);
        cfg.head_every_task = j.value("head_every_task", cfg.head_every_task);
        cfg.dual_gpm = j.value("dual_gpm", cfg.dual_gpm);
        cfg.dual_gpm_eps = j.value("dual_gpm_eps", cfg.dual_gpm_eps);
        cfg.project_keys = j.value("project_keys", cfg.project_keys);
        cfg.project_queries = j.value("project_queries", cfg.project_queries);
        cfg.replica_data_shard = j.value("replica_data_shard", cfg.replica_data_shard);
        cfg.dg_mixed_batches = j.value("dg_mixed_batches", cfg.dg_mixed_batches);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("backbone")) {
            const auto& b = j["backbone"];
            cfg.backbone.num_layers = b.value("num_layers", cfg.backbone.num_layers);
            cfg.backbone.model_dim = b.value("model_dim", cfg.backbone.model_dim);
            cfg.backbone.num_heads = b.value("num_heads", cfg.backbone.num_heads);
            cfg.backbone.input_dim = b.value("input_dim", cfg.backbone.input_dim);
            cfg.backbone.num_classes = b.value("num_classes", cfg.backbone.num_classes);
            cfg.backbone.seq_len = b.value("seq_len", cfg.backbone.seq_len);
            cfg.backbone.lora_alpha = b.value("lora_alpha", cfg.backbone.lora_alpha);
        }
        if (j.contains("stream")) {
            const auto& s = j["stream"];
            cfg.stream.num_classes = s.value("num_classes", cfg.stream.num_classes);
            cfg.stream.num_domains = s.value("num_domains", cfg.stream.num_domains);
            cfg.stream.samples_per_class = s.value("samples_per_class", cfg.stream.samples_per_class);
            cfg.stream.domain_shift = s.value("domain_shift", cfg.stream.domain_shift);
            cfg.stream.input_dim = s.value("input_dim", cfg.stream.input_dim);
            cfg.stream.noise_stddev = s.value("noise_stddev", cfg.stream.noise_stddev);
            cfg.stream.test_fraction = s.value("test_fraction", cfg.stream.test_fraction);
            cfg.stream.cil_num_tasks = s.value("cil_num_tasks", cfg.stream.cil_num_tasks);
            cfg.stream.dg_holdout_domain = s.value("dg_holdout_domain", cfg.stream.dg_holdout_domain);
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config field has the wrong type: ") + e.what());
    }
    return cfg;
}

int ClassIndex::col_of(int global_class) const {
    for (size_t i = 0; i < classes.size(); ++i) {
        if (classes[i] == global_class) return static_cast<int>(i);
    }
    throw contract_error("class " + std::to_string(global_class) + " not covered by the head");
}

int ClassIndex::global_of(int col) const {
    check_contract(col >= 0 && col < size(), "head column out of range");
    return classes[col];
}

bool ClassIndex::contains(int global_class) const {
    return std::find(classes.begin(), classes.end(), global_class) != classes.end();
}

std::uint64_t ModelState::theta_checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const MemoryUnit& mem : memories) {
        const std::uint64_t c = mem.values.checksum();
        for (int i = 0; i < 8; ++i) {
            h ^= (c >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

GradientSubspace* ModelState::find_subspace(const std::string& group_id) {
    for (GradientSubspace& s : subspaces) {
        if (s.param_group_id == group_id) return &s;
    }
    return nullptr;
}

namespace {

void append_head_block(ModelState& st, const std::vector<int>& class_ids) {
    for (int c : class_ids) {
        check_contract(!st.classes.contains(c), "head already covers class " + std::to_string(c));
    }
    HeadBlock blk;
    blk.class_ids = class_ids;
    const std::string base = "head" + std::to_string(st.head.size());
    blk.weight = Parameter(base + ".w", Tensor(st.bcfg.model_dim, static_cast<int>(class_ids.size())));
    blk.bias = Parameter(base + ".b", Tensor(1, static_cast<int>(class_ids.size())));
    st.head.push_back(std::move(blk));
    st.classes.classes.insert(st.classes.classes.end(), class_ids.begin(), class_ids.end());
}

template <class Ctx, class State>
std::pair<typename Ctx::Val, typename Ctx::Val> assemble_head(Ctx& ctx, State& st) {
    check_contract(!st.head.empty(), "model has no head blocks yet");
    std::vector<typename Ctx::Val> ws, bs;
    for (auto& blk : st.head) {
        ws.push_back(ctx.param(blk.weight));
        bs.push_back(ctx.param(blk.bias));
    }
    if (ws.size() == 1) return {ws[0], bs[0]};
    return {ctx.concat_cols(ws), ctx.concat_cols(bs)};
}

Tensor gather_rows(const Tensor& features, const std::vector<int>& order, int from, int to) {
    Tensor out(to - from, features.cols());
    for (int i = from; i < to; ++i) {
        for (int j = 0; j < features.cols(); ++j) out.at(i - from, j) = features.at(order[i], j);
    }
    return out;
}

// Column-major flattening keeps old key columns at stable coordinates as new
// columns are appended across tasks.
Tensor flatten_colmajor(const Tensor& m) {
    Tensor out(m.rows() * m.cols(), 1);
    std::int64_t i = 0;
    for (int c = 0; c < m.cols(); ++c)
        for (int r = 0; r < m.rows(); ++r) out[i++] = m.at(r, c);
    return out;
}

void unflatten_colmajor(const Tensor& flat, Tensor& m) {
    check_shape(flat.size() == m.size(), "unflatten size mismatch");
    std::int64_t i = 0;
    for (int c = 0; c < m.cols(); ++c)
        for (int r = 0; r < m.rows(); ++r) m.at(r, c) = flat[i++];
}

Tensor flatten_query_grads(const QueryModule& qm) {
    Tensor out(qm.param_dim(), 1);
    std::int64_t i = 0;
    for (const Parameter& p : qm.params)
        for (std::int64_t k = 0; k < p.grad.size(); ++k) out[i++] = p.grad[k];
    return out;
}

void unflatten_query_grads(const Tensor& flat, QueryModule& qm) {
    check_shape(flat.size() == qm.param_dim(), "query grad size mismatch");
    std::int64_t i = 0;
    for (Parameter& p : qm.params)
        for (std::int64_t k = 0; k < p.grad.size(); ++k) p.grad[k] = flat[i++];
}

// Batched logits for shared adapter weights (adaptation / baseline).
Var shared_adapter_logits(Tape& tape, const BackboneConfig& bcfg, const FrozenWeights& frozen,
                          std::vector<LayerAdapterParams>& adapters, Var head_w, Var head_b,
                          const Tensor& x_batch) {
    std::vector<LayerWeightVals<Tape>> weights;
    weights.reserve(static_cast<size_t>(bcfg.num_layers));
    for (int l = 0; l < bcfg.num_layers; ++l) {
        auto w_q_eff = effective_weight(tape, tape.constant(frozen.layers[l].w_q),
                                        tape.param(adapters[l].a_q), tape.param(adapters[l].b_q),
                                        bcfg.lora_scaling());
        auto w_v_eff = effective_weight(tape, tape.constant(frozen.layers[l].w_v),
                                        tape.param(adapters[l].a_v), tape.param(adapters[l].b_v),
                                        bcfg.lora_scaling());
        weights.push_back(layer_weight_vals(tape, frozen.layers[l], w_q_eff, w_v_eff));
    }
    Var x = tape.constant(x_batch);
    if (bcfg.seq_len == 1) {
        return batched_forward_s1(tape, bcfg, frozen, x, weights, head_w, head_b);
    }
    std::vector<Var> rows;
    rows.reserve(static_cast<size_t>(x_batch.rows()));
    for (int i = 0; i < x_batch.rows(); ++i) {
        rows.push_back(sample_forward(tape, bcfg, frozen, tape.slice_rows(x, i, i + 1), weights,
                                      head_w, head_b));
    }
    return rows.size() == 1 ? rows[0] : tape.concat_rows(rows);
}

std::vector<AdapterVector> adapters_to_vectors(const BackboneConfig& bcfg,
                                               const std::vector<LayerAdapterParams>& adapters) {
    std::vector<AdapterVector> out;
    out.reserve(adapters.size());
    for (size_t l = 0; l < adapters.size(); ++l) {
        out.push_back(flatten_adapter(bcfg, static_cast<int>(l), adapters[l].a_q.value,
                                      adapters[l].b_q.value, adapters[l].a_v.value,
                                      adapters[l].b_v.value));
    }
    return out;
}

std::pair<Tensor, Tensor> plain_head(const ModelState& st) {
    std::vector<const Tensor*> ws, bs;
    for (const HeadBlock& blk : st.head) {
        ws.push_back(&blk.weight.value);
        bs.push_back(&blk.bias.value);
    }
    return {kernels::concat_cols(ws), kernels::concat_cols(bs)};
}

}  // namespace

ModelState init_model_state(const TrainConfig& cfg, const TaskStream& stream) {
    cfg.validate();
    ModelState st;
    st.cfg = cfg;
    st.bcfg = cfg.backbone;
    st.bcfg.lora_rank = cfg.lora_rank;
    st.bcfg.input_dim = stream.input_dim;
    st.bcfg.num_classes = stream.num_classes_total;
    st.bcfg.validate();
    const int d_k = cfg.resolved_key_dim();
    const int d_h = st.bcfg.model_dim;

    st.frozen = init_frozen(st.bcfg, derive_seed(cfg.seed, "frozen"));
    for (int l = 0; l < st.bcfg.num_layers; ++l) {
        st.memories.emplace_back(l, d_k, st.bcfg.adapter_dim(),
                                 SeparationSpec{cfg.sep_kind, cfg.softmax_beta});
        st.queries.push_back(
            QueryModule::make(cfg.query_kind, l, d_h, d_k, derive_seed(cfg.seed, "query")));
    }
    if (cfg.setting != Setting::CIL) {
        std::set<int> classes;
        for (int t = 0; t < stream.task_count(); ++t) {
            const auto& ls = stream.train_task(t).label_set;
            classes.insert(ls.begin(), ls.end());
        }
        append_head_block(st, std::vector<int>(classes.begin(), classes.end()));
    }
    return st;
}

AdaptationReport adaptation(const TaskDataset& data, ModelState& st, const TrainConfig& cfg) {
    check_contract(data.size() >= 1, "adaptation requires a non-empty dataset");
    const int t = st.tasks_adapted;
    const std::uint64_t frozen_before = st.frozen.checksum();

    if (cfg.setting == Setting::CIL) append_head_block(st, data.label_set);

    // Local label columns: CIL trains only the current block, other settings
    // the full shared head.
    HeadBlock& block = cfg.setting == Setting::CIL ? st.head.back() : st.head.front();
    std::vector<int> label_cols(data.labels.size());
    for (size_t i = 0; i < data.labels.size(); ++i) {
        if (cfg.setting == Setting::CIL) {
            auto it = std::find(block.class_ids.begin(), block.class_ids.end(), data.labels[i]);
            check_contract(it != block.class_ids.end(), "label outside the task's class set");
            label_cols[i] = static_cast<int>(it - block.class_ids.begin());
        } else {
            label_cols[i] = st.classes.col_of(data.labels[i]);
        }
    }

    AdaptationReport report;
    report.replica_epoch_loss.resize(static_cast<size_t>(cfg.adapters_per_task));
    for (int replica = 0; replica < cfg.adapters_per_task; ++replica) {
        std::vector<LayerAdapterParams> adapters;
        adapters.reserve(static_cast<size_t>(st.bcfg.num_layers));
        const std::uint64_t replica_seed =
            derive_seed(cfg.seed, "lora", static_cast<std::uint64_t>(t),
                        static_cast<std::uint64_t>(replica));
        for (int l = 0; l < st.bcfg.num_layers; ++l) {
            adapters.push_back(init_lora_params(st.bcfg, l, replica_seed));
        }

        std::vector<int> indices;
        for (int i = 0; i < data.size(); ++i) {
            if (!cfg.replica_data_shard || i % cfg.adapters_per_task == replica) indices.push_back(i);
        }
        check_contract(!indices.empty(), "replica shard is empty");

        // The head trains jointly with the first replica's adapters; later
        // replicas (and, for the shared DIL/DG head, later tasks) fit against
        // the fixed head so every stored adapter stays compatible with it.
        const bool head_trains =
            replica == 0 && (cfg.setting == Setting::CIL || t == 0 || cfg.head_every_task);
        block.weight.trainable = head_trains;
        block.bias.trainable = head_trains;
        std::vector<Parameter*> params;
        for (LayerAdapterParams& a : adapters) {
            a.a_q.trainable = a.b_q.trainable = a.a_v.trainable = a.b_v.trainable = true;
            params.insert(params.end(), {&a.a_q, &a.b_q, &a.a_v, &a.b_v});
        }
        if (head_trains) {
            params.push_back(&block.weight);
            params.push_back(&block.bias);
        }
        AdamW opt(params, AdamWConfig{cfg.lr_adapt, cfg.weight_decay});

        for (int epoch = 0; epoch < cfg.adapt_epochs; ++epoch) {
            auto rng = make_rng(cfg.seed, "adapt-shuffle", static_cast<std::uint64_t>(t),
                                static_cast<std::uint64_t>(replica), static_cast<std::uint64_t>(epoch));
            std::shuffle(indices.begin(), indices.end(), rng);
            double loss_sum = 0.0;
            int batches = 0;
            for (int b0 = 0; b0 < static_cast<int>(indices.size()); b0 += cfg.batch_size) {
                const int b1 = std::min<int>(b0 + cfg.batch_size, static_cast<int>(indices.size()));
                Tensor x = gather_rows(data.features, indices, b0, b1);
                std::vector<int> cols;
                cols.reserve(static_cast<size_t>(b1 - b0));
                for (int i = b0; i < b1; ++i) cols.push_back(label_cols[indices[i]]);

                Tape tape;
                Var head_w = tape.param(block.weight);
                Var head_b = tape.param(block.bias);
                Var logits = shared_adapter_logits(tape, st.bcfg, st.frozen, adapters, head_w,
                                                   head_b, x);
                Var loss = tape.cross_entropy(logits, cols);
                const double loss_value = tape.value(loss)[0];
                if (!std::isfinite(loss_value)) {
                    throw numeric_error("adaptation loss diverged (task " + std::to_string(t) +
                                        ", replica " + std::to_string(replica) + ", epoch " +
                                        std::to_string(epoch) + ")");
                }
                opt.zero_grad();
                tape.backward(loss);
                opt.step();
                loss_sum += loss_value;
                ++batches;
            }
            report.replica_epoch_loss[replica].push_back(loss_sum / batches);
        }

        for (int l = 0; l < st.bcfg.num_layers; ++l) {
            const Tensor key =
                sample_key(cfg.resolved_sigma2(), st.memories[l].key_dim,
                           derive_seed(cfg.seed, "key",
                                       static_cast<std::uint64_t>(t) * 1000 +
                                           static_cast<std::uint64_t>(replica),
                                       static_cast<std::uint64_t>(l)));
            const AdapterVector theta =
                flatten_adapter(st.bcfg, l, adapters[l].a_q.value, adapters[l].b_q.value,
                                adapters[l].a_v.value, adapters[l].b_v.value);
            write(st.memories[l], key, theta);
        }
    }

    st.tasks_adapted += 1;
    check_contract(st.frozen.checksum() == frozen_before,
                   "frozen backbone changed during adaptation");
    return report;
}

ConsolidationReport consolidation(const TaskDataset& data, ModelState& st, const TrainConfig& cfg) {
    check_contract(data.size() >= 1, "consolidation requires a non-empty dataset");
    for (const MemoryUnit& mem : st.memories) {
        check_contract(mem.count() >= 1, "consolidation requires non-empty memories");
    }
    const int t = st.tasks_consolidated;
    const std::uint64_t frozen_before = st.frozen.checksum();
    const std::uint64_t theta_before = st.theta_checksum();

    std::vector<Parameter*> params;
    for (MemoryUnit& mem : st.memories) {
        mem.keys.trainable = true;
        params.push_back(&mem.keys);
    }
    for (QueryModule& qm : st.queries) {
        for (Parameter& p : qm.params) {
            p.trainable = true;
            params.push_back(&p);
        }
    }
    for (HeadBlock& blk : st.head) {
        blk.weight.trainable = false;
        blk.bias.trainable = false;
    }
    if (cfg.setting == Setting::CIL) {
        check_contract(t < static_cast<int>(st.head.size()),
                       "CIL consolidation expects the task's head block");
        HeadBlock& blk = st.head[t];
        blk.weight.trainable = true;
        blk.bias.trainable = true;
        params.push_back(&blk.weight);
        params.push_back(&blk.bias);
    }
    AdamW opt(params, AdamWConfig{cfg.lr_consolidate, cfg.weight_decay});

    // Protected-subspace bookkeeping. Key-matrix dimensions grow with every
    // adapted task; moments and bases are zero-padded to match.
    std::vector<GradientSubspace*> key_subs(static_cast<size_t>(st.bcfg.num_layers), nullptr);
    std::vector<GradientSubspace*> query_subs(static_cast<size_t>(st.bcfg.num_layers), nullptr);
    if (cfg.dual_gpm) {
        for (int l = 0; l < st.bcfg.num_layers; ++l) {
            if (cfg.project_keys) {
                const std::string id = "keys." + std::to_string(l);
                const int dim = st.memories[l].key_dim * st.memories[l].count();
                if (!st.find_subspace(id))
                    st.subspaces.push_back(make_subspace(id, dim, cfg.dual_gpm_eps));
            }
            if (cfg.project_queries && st.queries[l].param_dim() > 0) {
                const std::string id = "query." + std::to_string(l);
                if (!st.find_subspace(id))
                    st.subspaces.push_back(
                        make_subspace(id, st.queries[l].param_dim(), cfg.dual_gpm_eps));
            }
        }
        for (int l = 0; l < st.bcfg.num_layers; ++l) {
            if (cfg.project_keys) {
                key_subs[l] = st.find_subspace("keys." + std::to_string(l));
                grow_subspace(*key_subs[l], st.memories[l].key_dim * st.memories[l].count());
            }
            if (cfg.project_queries && st.queries[l].param_dim() > 0) {
                query_subs[l] = st.find_subspace("query." + std::to_string(l));
            }
        }
    }

    std::vector<int> indices(static_cast<size_t>(data.size()));
    std::iota(indices.begin(), indices.end(), 0);
    std::vector<int> label_cols(data.labels.size());
    for (size_t i = 0; i < data.labels.size(); ++i) {
        label_cols[i] = st.classes.col_of(data.labels[i]);
    }

    ConsolidationReport report;
    const int epochs = cfg.resolved_consolidate_epochs();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        auto rng = make_rng(cfg.seed, "cons-shuffle", static_cast<std::uint64_t>(t),
                            static_cast<std::uint64_t>(epoch));
        std::shuffle(indices.begin(), indices.end(), rng);
        const std::uint64_t deg0 = st.diag.degenerate_reads;
        const std::uint64_t tot0 = st.diag.total_reads;
        double loss_sum = 0.0;
        int batches = 0;
        for (int b0 = 0; b0 < static_cast<int>(indices.size()); b0 += cfg.batch_size) {
            const int b1 = std::min<int>(b0 + cfg.batch_size, static_cast<int>(indices.size()));
            Tape tape;
            auto [head_w, head_b] = assemble_head(tape, st);
            std::vector<Var> rows;
            std::vector<int> cols;
            rows.reserve(static_cast<size_t>(b1 - b0));
            for (int i = b0; i < b1; ++i) {
                Var x = tape.constant(kernels::slice_rows(data.features, indices[i], indices[i] + 1));
                rows.push_back(modulated_sample_forward(tape, st.bcfg, st.frozen, st.memories,
                                                        st.queries, head_w, head_b, x, nullptr,
                                                        &st.diag));
                cols.push_back(label_cols[indices[i]]);
            }
            Var logits = rows.size() == 1 ? rows[0] : tape.concat_rows(rows);
            Var loss = tape.cross_entropy(logits, cols);
            const double loss_value = tape.value(loss)[0];
            if (!std::isfinite(loss_value)) {
                throw numeric_error("consolidation loss diverged (task " + std::to_string(t) +
                                    ", epoch " + std::to_string(epoch) + ")");
            }
            opt.zero_grad();
            tape.backward(loss);
            if (cfg.dual_gpm) {
                for (int l = 0; l < st.bcfg.num_layers; ++l) {
                    if (key_subs[l]) {
                        Tensor flat = flatten_colmajor(st.memories[l].keys.grad);
                        if (key_subs[l]->has_basis()) {
                            flat = project_gradient(flat, *key_subs[l]);
                            unflatten_colmajor(flat, st.memories[l].keys.grad);
                        }
                        accumulate(*key_subs[l], {flat});
                    }
                    if (query_subs[l]) {
                        Tensor flat = flatten_query_grads(st.queries[l]);
                        if (query_subs[l]->has_basis()) {
                            flat = project_gradient(flat, *query_subs[l]);
                            unflatten_query_grads(flat, st.queries[l]);
                        }
                        accumulate(*query_subs[l], {flat});
                    }
                }
            }
            opt.step();
            loss_sum += loss_value;
            ++batches;
        }
        report.epoch_loss.push_back(loss_sum / batches);
        const std::uint64_t total = st.diag.total_reads - tot0;
        const double rate =
            total == 0 ? 0.0
                       : static_cast<double>(st.diag.degenerate_reads - deg0) / static_cast<double>(total);
        report.degenerate_rate = std::max(report.degenerate_rate, rate);
    }
    if (report.degenerate_rate > 0.10) {
        report.degenerate_warning = true;
        st.degenerate_warning = true;
    }

    if (cfg.dual_gpm) {
        for (GradientSubspace& sub : st.subspaces) {
            if (sub.current_count > 0) update_basis(sub);
        }
    }

    st.tasks_consolidated += 1;
    check_contract(st.frozen.checksum() == frozen_before,
                   "frozen backbone changed during consolidation");
    check_contract(st.theta_checksum() == theta_before,
                   "stored adapter values changed during consolidation");
    return report;
}

double evaluate_dataset(const ModelState& st, const TaskDataset& test) {
    check_contract(test.size() >= 1, "empty test split");
    auto [head_w, head_b] = plain_head(st);
    int correct = 0;
    for (int i = 0; i < test.size(); ++i) {
        const Tensor x = kernels::slice_rows(test.features, i, i + 1);
        const Tensor logits = inference_forward(st.bcfg, st.frozen, st.memories, st.queries, head_w,
                                                head_b, x);
        int best = 0;
        for (int c = 1; c < logits.cols(); ++c) {
            if (logits.at(0, c) > logits.at(0, best)) best = c;
        }
        if (st.classes.global_of(best) == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / test.size();
}

void mira_adapt_task(TaskStream& stream, const TrainConfig& cfg, ModelState& st, int task) {
    check_contract(task == st.tasks_adapted, "tasks must be adapted in stream order");
    adaptation(stream.train_task(task), st, cfg);
}

void mira_consolidate_task(TaskStream& stream, const TrainConfig& cfg, ModelState& st, int task) {
    check_contract(task == st.tasks_consolidated, "tasks must be consolidated in stream order");
    check_contract(task < st.tasks_adapted, "consolidation requires the task to be adapted first");
    const int total = stream.task_count();
    if (cfg.setting == Setting::DG && cfg.dg_mixed_batches) {
        std::vector<const TaskDataset*> parts;
        for (int s = 0; s < total; ++s) parts.push_back(&stream.train_task(s));
        const TaskDataset pooled = merge_tasks(parts, task);
        consolidation(pooled, st, cfg);
    } else {
        consolidation(stream.train_task(task), st, cfg);
    }

    if (cfg.setting == Setting::DG) {
        if (task == total - 1) {
            for (int s = 0; s < total; ++s) stream.complete_task(s);
            st.matrix.append_row({evaluate_dataset(st, stream.test_splits[0])});
        }
    } else {
        stream.complete_task(task);
        std::vector<double> row;
        row.reserve(static_cast<size_t>(task) + 1);
        for (int j = 0; j <= task; ++j) row.push_back(evaluate_dataset(st, stream.test_splits[j]));
        st.matrix.append_row(row);
    }
}

EvalReport report_from_state(const ModelState& st) {
    EvalReport rep = EvalReport::from_matrix(st.cfg.setting, st.matrix);
    rep.degenerate_reads = st.diag.degenerate_reads;
    rep.total_reads = st.diag.total_reads;
    rep.degenerate_warning = st.degenerate_warning;
    rep.seed = st.cfg.seed;
    rep.config_json = train_config_to_json(st.cfg);
    return rep;
}

EvalReport run_mira(TaskStream& stream, const TrainConfig& cfg) {
    return run_mira(stream, cfg, nullptr);
}

EvalReport run_mira(TaskStream& stream, const TrainConfig& cfg, ModelState* out_state) {
    cfg.validate();
    check_config(stream.setting == cfg.setting, "config setting does not match the stream");
    ModelState st = init_model_state(cfg, stream);
    const int total = stream.task_count();
    if (cfg.setting == Setting::DG) {
        for (int t = 0; t < total; ++t) mira_adapt_task(stream, cfg, st, t);
        for (int t = 0; t < total; ++t) mira_consolidate_task(stream, cfg, st, t);
    } else {
        for (int t = 0; t < total; ++t) {
            mira_adapt_task(stream, cfg, st, t);
            mira_consolidate_task(stream, cfg, st, t);
        }
    }
    EvalReport rep = report_from_state(st);
    if (out_state) *out_state = std::move(st);
    return rep;
}

EvalReport run_baseline(TaskStream& stream, const TrainConfig& cfg) {
    cfg.validate();
    check_config(stream.setting == cfg.setting, "config setting does not match the stream");
    check_config(cfg.setting != Setting::DG,
                 "the sequential fine-tuning baseline applies to DIL/CIL streams");
    ModelState st = init_model_state(cfg, stream);

    std::vector<LayerAdapterParams> adapters;
    for (int l = 0; l < st.bcfg.num_layers; ++l) {
        adapters.push_back(init_lora_params(st.bcfg, l, derive_seed(cfg.seed, "baseline-lora")));
    }

    const int total = stream.task_count();
    for (int t = 0; t < total; ++t) {
        const TaskDataset& data = stream.train_task(t);
        if (cfg.setting == Setting::CIL) append_head_block(st, data.label_set);

        std::vector<Parameter*> params;
        for (LayerAdapterParams& a : adapters) {
            params.insert(params.end(), {&a.a_q, &a.b_q, &a.a_v, &a.b_v});
        }
        for (HeadBlock& blk : st.head) {
            blk.weight.trainable = true;
            blk.bias.trainable = true;
            params.push_back(&blk.weight);
            params.push_back(&blk.bias);
        }
        AdamW opt(params, AdamWConfig{cfg.lr_adapt, cfg.weight_decay});

        std::vector<int> indices(static_cast<size_t>(data.size()));
        std::iota(indices.begin(), indices.end(), 0);
        std::vector<int> label_cols(data.labels.size());
        for (size_t i = 0; i < data.labels.size(); ++i)
            label_cols[i] = st.classes.col_of(data.labels[i]);

        for (int epoch = 0; epoch < cfg.adapt_epochs; ++epoch) {
            auto rng = make_rng(cfg.seed, "baseline-shuffle", static_cast<std::uint64_t>(t),
                                static_cast<std::uint64_t>(epoch));
            std::shuffle(indices.begin(), indices.end(), rng);
            for (int b0 = 0; b0 < static_cast<int>(indices.size()); b0 += cfg.batch_size) {
                const int b1 = std::min<int>(b0 + cfg.batch_size, static_cast<int>(indices.size()));
                Tensor x = gather_rows(data.features, indices, b0, b1);
                std::vector<int> cols;
                for (int i = b0; i < b1; ++i) cols.push_back(label_cols[indices[i]]);
                Tape tape;
                auto [head_w, head_b] = assemble_head(tape, st);
                Var logits = shared_adapter_logits(tape, st.bcfg, st.frozen, adapters, head_w,
                                                   head_b, x);
                Var loss = tape.cross_entropy(logits, cols);
                if (!std::isfinite(tape.value(loss)[0])) {
                    throw numeric_error("baseline loss diverged (task " + std::to_string(t) + ")");
                }
                opt.zero_grad();
                tape.backward(loss);
                opt.step();
            }
        }
        stream.complete_task(t);

        // Evaluate with the current adapters loaded directly.
        auto [head_w, head_b] = plain_head(st);
        const std::vector<AdapterVector> vecs = adapters_to_vectors(st.bcfg, adapters);
        std::vector<double> row;
        for (int j = 0; j <= t; ++j) {
            const TaskDataset& test = stream.test_splits[j];
            const Tensor logits =
                forward_with_adapters(st.bcfg, st.frozen, vecs, head_w, head_b, test.features);
            int correct = 0;
            for (int i = 0; i < test.size(); ++i) {
                int best = 0;
                for (int c = 1; c < logits.cols(); ++c) {
                    if (logits.at(i, c) > logits.at(i, best)) best = c;
                }
                if (st.classes.global_of(best) == test.labels[i]) ++correct;
            }
            row.push_back(static_cast<double>(correct) / test.size());
        }
        st.matrix.append_row(row);
    }

    return report_from_state(st);
}

}  // namespace mira
