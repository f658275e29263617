#include "mira/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace mira {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace {

struct TensorEntry {
    std::string name;
    const Tensor* tensor;
};

// Fixed serialization order; the manifest lists the same entries.
std::vector<TensorEntry> tensor_directory(const ModelState& st) {
    std::vector<TensorEntry> dir;
    auto add = [&dir](const std::string& name, const Tensor& t) {
        if (!t.empty()) dir.push_back({name, &t});
    };
    const std::vector<const Tensor*> frozen = st.frozen.tensors();
    for (size_t i = 0; i < frozen.size(); ++i) add("frozen." + std::to_string(i), *frozen[i]);
    for (size_t b = 0; b < st.head.size(); ++b) {
        add("head." + std::to_string(b) + ".w", st.head[b].weight.value);
        add("head." + std::to_string(b) + ".b", st.head[b].bias.value);
    }
    for (size_t l = 0; l < st.memories.size(); ++l) {
        add("memory." + std::to_string(l) + ".keys", st.memories[l].keys.value);
        add("memory." + std::to_string(l) + ".values", st.memories[l].values);
    }
    for (size_t l = 0; l < st.queries.size(); ++l) {
        for (size_t p = 0; p < st.queries[l].params.size(); ++p) {
            add("query." + std::to_string(l) + ".p" + std::to_string(p),
                st.queries[l].params[p].value);
        }
    }
    for (size_t s = 0; s < st.subspaces.size(); ++s) {
        add("subspace." + std::to_string(s) + ".moment", st.subspaces[s].moment_completed);
        add("subspace." + std::to_string(s) + ".basis", st.subspaces[s].basis);
    }
    return dir;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw corruption_error(std::string("truncated while reading ") + what);
    return v;
}

std::uint64_t read_u64(std::istream& in, const char* what) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw corruption_error(std::string("truncated while reading ") + what);
    return v;
}

void write_blob(std::ostream& out, const Tensor& t) {
    out.write("MIRA", 4);
    write_u32(out, 2);
    write_u32(out, static_cast<std::uint32_t>(t.rows()));
    write_u32(out, static_cast<std::uint32_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_blob(std::istream& in, const std::string& name, int rows, int cols) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MIRA", 4) != 0) {
        throw corruption_error("bad blob magic for tensor " + name);
    }
    const std::uint32_t rank = read_u32(in, "blob rank");
    if (rank != 2) throw corruption_error("unsupported blob rank for tensor " + name);
    const std::uint32_t r = read_u32(in, "blob rows");
    const std::uint32_t c = read_u32(in, "blob cols");
    if (static_cast<int>(r) != rows || static_cast<int>(c) != cols) {
        throw corruption_error("blob dimensions for " + name + " (" + std::to_string(r) + "x" +
                               std::to_string(c) + ") do not match the manifest (" +
                               std::to_string(rows) + "x" + std::to_string(cols) + ")");
    }
    Tensor t(rows, cols);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw corruption_error("truncated blob payload for tensor " + name);
    return t;
}

}  // namespace

void save_checkpoint(const ModelState& st, const std::string& path) {
    nlohmann::json m;
    m["format_version"] = kCheckpointFormatVersion;
    m["config"] = nlohmann::json::parse(train_config_to_json(st.cfg));
    m["backbone"] = {{"num_layers", st.bcfg.num_layers},     {"model_dim", st.bcfg.model_dim},
                     {"num_heads", st.bcfg.num_heads},       {"input_dim", st.bcfg.input_dim},
                     {"num_classes", st.bcfg.num_classes},   {"lora_rank", st.bcfg.lora_rank},
                     {"seq_len", st.bcfg.seq_len},           {"lora_alpha", st.bcfg.lora_alpha}};
    m["progress"] = {{"tasks_adapted", st.tasks_adapted},
                     {"tasks_consolidated", st.tasks_consolidated}};
    m["class_index"] = st.classes.classes;
    {
        nlohmann::json blocks = nlohmann::json::array();
        for (const HeadBlock& b : st.head) blocks.push_back({{"classes", b.class_ids}});
        m["head_blocks"] = blocks;
    }
    {
        nlohmann::json mems = nlohmann::json::array();
        for (const MemoryUnit& mem : st.memories) {
            mems.push_back({{"layer", mem.layer_index},
                            {"key_dim", mem.key_dim},
                            {"value_dim", mem.value_dim},
                            {"count", mem.count()}});
        }
        m["memories"] = mems;
    }
    {
        nlohmann::json subs = nlohmann::json::array();
        for (const GradientSubspace& s : st.subspaces) {
            subs.push_back({{"id", s.param_group_id},
                            {"dim", s.dim},
                            {"rank", s.rank()},
                            {"energy_budget", s.energy_budget}});
        }
        m["subspaces"] = subs;
    }
    m["degenerate_reads"] = st.diag.degenerate_reads;
    m["total_reads"] = st.diag.total_reads;
    m["degenerate_warning"] = st.degenerate_warning;
    m["accuracy_matrix"] = st.matrix.a;
    {
        nlohmann::json dir = nlohmann::json::array();
        for (const TensorEntry& e : tensor_directory(st)) {
            dir.push_back({{"name", e.name}, {"rows", e.tensor->rows()}, {"cols", e.tensor->cols()}});
        }
        m["tensors"] = dir;
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    const std::string manifest = m.dump();
    write_u64(out, manifest.size());
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    for (const TensorEntry& e : tensor_directory(st)) write_blob(out, *e.tensor);
    if (!out) throw io_error("failed writing checkpoint " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    const std::uint64_t manifest_len = read_u64(in, "manifest length");
    std::string manifest_text(manifest_len, '\0');
    in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
    if (!in) throw corruption_error("truncated manifest");
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(manifest_text);
    } catch (const nlohmann::json::exception& e) {
        throw corruption_error(std::string("manifest is not valid JSON: ") + e.what());
    }

    const int version = m.value("format_version", -1);
    if (version != kCheckpointFormatVersion) {
        throw io_error("checkpoint format version " + std::to_string(version) +
                       " does not match supported version " +
                       std::to_string(kCheckpointFormatVersion));
    }

    ModelState st;
    st.cfg = train_config_from_json(m["config"].dump());
    const auto& b = m["backbone"];
    st.bcfg.num_layers = b["num_layers"];
    st.bcfg.model_dim = b["model_dim"];
    st.bcfg.num_heads = b["num_heads"];
    st.bcfg.input_dim = b["input_dim"];
    st.bcfg.num_classes = b["num_classes"];
    st.bcfg.lora_rank = b["lora_rank"];
    st.bcfg.seq_len = b["seq_len"];
    st.bcfg.lora_alpha = b["lora_alpha"];
    st.bcfg.validate();
    st.tasks_adapted = m["progress"]["tasks_adapted"];
    st.tasks_consolidated = m["progress"]["tasks_consolidated"];
    st.classes.classes = m["class_index"].get<std::vector<int>>();
    st.degenerate_warning = m.value("degenerate_warning", false);
    st.diag.degenerate_reads = m.value("degenerate_reads", 0ull);
    st.diag.total_reads = m.value("total_reads", 0ull);
    st.matrix.a = m["accuracy_matrix"].get<std::vector<std::vector<double>>>();

    // Shells with the right shapes; blob payloads overwrite them below.
    st.frozen = init_frozen(st.bcfg, 0);
    for (const auto& blk : m["head_blocks"]) {
        HeadBlock hb;
        hb.class_ids = blk["classes"].get<std::vector<int>>();
        const std::string base = "head" + std::to_string(st.head.size());
        hb.weight = Parameter(base + ".w",
                              Tensor(st.bcfg.model_dim, static_cast<int>(hb.class_ids.size())));
        hb.bias = Parameter(base + ".b", Tensor(1, static_cast<int>(hb.class_ids.size())));
        st.head.push_back(std::move(hb));
    }
    for (const auto& mem_meta : m["memories"]) {
        MemoryUnit mem(mem_meta["layer"], mem_meta["key_dim"], mem_meta["value_dim"],
                       SeparationSpec{st.cfg.sep_kind, st.cfg.softmax_beta});
        const int count = mem_meta["count"];
        if (count > 0) {
            mem.keys.value = Tensor(mem.key_dim, count);
            mem.keys.resize_like_value();
            mem.values = Tensor(mem.value_dim, count);
        }
        st.memories.push_back(std::move(mem));
    }
    check_contract(static_cast<int>(st.memories.size()) == st.bcfg.num_layers,
                   "memory count does not match backbone depth");
    for (int l = 0; l < st.bcfg.num_layers; ++l) {
        st.queries.push_back(QueryModule::make(st.cfg.query_kind, l, st.bcfg.model_dim,
                                               st.cfg.resolved_key_dim(), 0));
    }
    for (const auto& sub_meta : m["subspaces"]) {
        GradientSubspace sub = make_subspace(sub_meta["id"], sub_meta["dim"],
                                             sub_meta["energy_budget"]);
        const int rank = sub_meta["rank"];
        if (rank > 0) sub.basis = Tensor(sub.dim, rank);
        st.subspaces.push_back(std::move(sub));
    }

    // Mutable view of every serializable tensor, in directory order.
    std::vector<std::pair<std::string, Tensor*>> slots;
    {
        auto add = [&slots](const std::string& name, Tensor& t) {
            if (!t.empty()) slots.emplace_back(name, &t);
        };
        std::vector<Tensor*> frozen = st.frozen.tensors();
        for (size_t i = 0; i < frozen.size(); ++i) add("frozen." + std::to_string(i), *frozen[i]);
        for (size_t hb = 0; hb < st.head.size(); ++hb) {
            add("head." + std::to_string(hb) + ".w", st.head[hb].weight.value);
            add("head." + std::to_string(hb) + ".b", st.head[hb].bias.value);
        }
        for (size_t l = 0; l < st.memories.size(); ++l) {
            add("memory." + std::to_string(l) + ".keys", st.memories[l].keys.value);
            add("memory." + std::to_string(l) + ".values", st.memories[l].values);
        }
        for (size_t l = 0; l < st.queries.size(); ++l) {
            for (size_t p = 0; p < st.queries[l].params.size(); ++p) {
                add("query." + std::to_string(l) + ".p" + std::to_string(p),
                    st.queries[l].params[p].value);
            }
        }
        for (size_t s = 0; s < st.subspaces.size(); ++s) {
            add("subspace." + std::to_string(s) + ".moment", st.subspaces[s].moment_completed);
            add("subspace." + std::to_string(s) + ".basis", st.subspaces[s].basis);
        }
    }

    const auto& dir = m["tensors"];
    if (dir.size() != slots.size()) {
        throw corruption_error("manifest lists " + std::to_string(dir.size()) +
                               " tensors but the model shape needs " +
                               std::to_string(slots.size()));
    }
    for (size_t i = 0; i < slots.size(); ++i) {
        const std::string name = dir[i]["name"];
        if (name != slots[i].first) {
            throw corruption_error("manifest tensor order mismatch at " + name);
        }
        const int rows = dir[i]["rows"];
        const int cols = dir[i]["cols"];
        if (rows != slots[i].second->rows() || cols != slots[i].second->cols()) {
            throw corruption_error("manifest dimensions for " + name +
                                   " do not match the model shape");
        }
        *slots[i].second = read_blob(in, name, rows, cols);
    }
    for (MemoryUnit& mem : st.memories) mem.keys.resize_like_value();
    return st;
}

}  // namespace mira
