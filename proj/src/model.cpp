#include "steerlab/model.hpp"

#include "steerlab/error.hpp"
#include "steerlab/hashing.hpp"

#include <filesystem>
#include <set>

namespace steerlab {

using nlohmann::json;

std::string_view to_string(BlockKind kind) {
    return kind == BlockKind::full ? "full" : "linear";
}

BlockKind block_kind_from_string(std::string_view s) {
    if (s == "full") return BlockKind::full;
    if (s == "linear") return BlockKind::linear;
    throw Error(ErrorCode::metadata, "unknown block kind '" + std::string(s) + "'");
}

bool ModelConfig::has_full_blocks() const {
    for (auto k : block_kinds) {
        if (k == BlockKind::full) return true;
    }
    return false;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, "model config: " + what); };
    if (n_layers < 1) fail("n_layers must be positive");
    if (d_model < 1) fail("d_model must be positive");
    if (n_heads < 1) fail("n_heads must be positive");
    if (vocab_size < 2) fail("vocab_size must be at least 2");
    if (max_seq_len < 1) fail("max_seq_len must be positive");
    if (block_kinds.size() != static_cast<std::size_t>(n_layers)) fail("block_kinds length differs from n_layers");
    if (has_full_blocks()) {
        if (d_ff < 1) fail("d_ff must be positive");
        if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
        if ((d_model / n_heads) % 2 != 0) fail("head dimension must be even for rotary embeddings");
    }
    if (!(norm_eps > 0.0f)) fail("norm_eps must be positive");
}

json ModelConfig::to_json() const {
    json kinds = json::array();
    for (auto k : block_kinds) kinds.push_back(std::string(to_string(k)));
    return {{"n_layers", n_layers},     {"d_model", d_model},       {"n_heads", n_heads},
            {"d_ff", d_ff},             {"vocab_size", vocab_size}, {"max_seq_len", max_seq_len},
            {"block_kinds", kinds},     {"final_norm", final_norm}, {"norm_eps", norm_eps},
            {"rope_theta", rope_theta}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    try {
        c.n_layers = j.at("n_layers").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.max_seq_len = j.at("max_seq_len").get<int>();
        for (const auto& k : j.at("block_kinds")) c.block_kinds.push_back(block_kind_from_string(k.get<std::string>()));
        c.final_norm = j.value("final_norm", true);
        c.norm_eps = j.value("norm_eps", 1e-5f);
        c.rope_theta = j.value("rope_theta", 10000.0f);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::metadata, std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string block_tensor_name(int layer, std::string_view leaf) {
    return "blk." + std::to_string(layer) + "." + std::string(leaf);
}

namespace {

class ManifestReader {
public:
    explicit ManifestReader(const TensorFile& file) : file_(file) {}

    std::vector<float> take(const std::string& name, std::vector<std::size_t> shape) {
        auto it = file_.tensors.find(name);
        if (it == file_.tensors.end()) {
            throw Error(ErrorCode::missing_tensor, "missing required tensor '" + name + "'");
        }
        if (it->second.shape != shape) {
            throw Error(ErrorCode::shape_mismatch, "tensor '" + name + "' has shape " + shape_str(it->second.shape) +
                                                       ", expected " + shape_str(shape));
        }
        used_.insert(name);
        return it->second.data;
    }

    const Tensor* find(const std::string& name) const {
        auto it = file_.tensors.find(name);
        return it == file_.tensors.end() ? nullptr : &it->second;
    }

    void finish() const {
        for (const auto& [name, t] : file_.tensors) {
            if (!used_.contains(name)) {
                throw Error(ErrorCode::malformed_header, "unexpected tensor '" + name + "' in manifest");
            }
        }
    }

    static std::string shape_str(const std::vector<std::size_t>& s) {
        std::string out = "(";
        for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
        return out + ")";
    }

private:
    const TensorFile& file_;
    std::set<std::string> used_;
};

} // namespace

Model model_from_tensor_file(const TensorFile& file, Vocab vocab, std::string identifier) {
    if (!file.metadata.contains("config")) throw Error(ErrorCode::metadata, "container metadata lacks 'config'");
    Model m;
    m.config = ModelConfig::from_json(file.metadata["config"]);
    m.metadata = file.metadata;
    m.identifier = std::move(identifier);
    if (vocab.size() != static_cast<std::size_t>(m.config.vocab_size)) {
        throw Error(ErrorCode::dimension_mismatch, "vocabulary has " + std::to_string(vocab.size()) +
                                                       " entries but the model declares vocab_size " +
                                                       std::to_string(m.config.vocab_size));
    }
    if (vocab.size() < kReservedTokens) {
        throw Error(ErrorCode::empty_vocabulary, "vocabulary lacks the reserved BOS/EOS/UNK entries");
    }
    m.vocab = std::move(vocab);

    const auto d = static_cast<std::size_t>(m.config.d_model);
    const auto v = static_cast<std::size_t>(m.config.vocab_size);
    const auto f = static_cast<std::size_t>(m.config.d_ff);

    ManifestReader r(file);
    m.token_embd = r.take("token_embd", {v, d});
    m.output = r.take("output", {v, d});
    if (m.config.final_norm) m.output_norm = r.take("output_norm", {d});

    for (int l = 1; l <= m.config.n_layers; ++l) {
        Block b;
        b.kind = m.config.block_kinds[static_cast<std::size_t>(l - 1)];
        auto name = [l](std::string_view leaf) { return block_tensor_name(l, leaf); };
        if (b.kind == BlockKind::full) {
            b.full.attn_norm = r.take(name("attn_norm"), {d});
            b.full.wq = r.take(name("attn_q"), {d, d});
            b.full.wk = r.take(name("attn_k"), {d, d});
            b.full.wv = r.take(name("attn_v"), {d, d});
            b.full.wo = r.take(name("attn_out"), {d, d});
            b.full.ffn_norm = r.take(name("ffn_norm"), {d});
            b.full.ffn_gate = r.take(name("ffn_gate"), {f, d});
            b.full.ffn_up = r.take(name("ffn_up"), {f, d});
            b.full.ffn_down = r.take(name("ffn_down"), {d, f});
        } else {
            b.linear.mix = r.take(name("mix"), {d, d});
            const Tensor* read = r.find(name("read"));
            const Tensor* write = r.find(name("write"));
            if ((read == nullptr) != (write == nullptr)) {
                throw Error(ErrorCode::missing_tensor, "missing required tensor '" +
                                                           (read ? name("write") : name("read")) + "'");
            }
            if (read) {
                if (read->shape.size() != 2) {
                    throw Error(ErrorCode::shape_mismatch, "tensor '" + name("read") + "' must be a matrix");
                }
                const std::size_t rank = read->shape[0];
                b.linear.read_rank = rank;
                b.linear.read = r.take(name("read"), {rank, d});
                b.linear.write = r.take(name("write"), {d, rank});
            }
        }
        m.blocks.push_back(std::move(b));
    }
    r.finish();
    return m;
}

TensorFile Model::to_tensor_file() const {
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto v = static_cast<std::size_t>(config.vocab_size);
    const auto f = static_cast<std::size_t>(config.d_ff);
    TensorFile file;
    file.metadata = metadata;
    file.metadata["config"] = config.to_json();
    file.tensors["token_embd"] = {{v, d}, token_embd};
    file.tensors["output"] = {{v, d}, output};
    if (config.final_norm) file.tensors["output_norm"] = {{d}, output_norm};
    for (int l = 1; l <= config.n_layers; ++l) {
        const Block& b = blocks[static_cast<std::size_t>(l - 1)];
        auto name = [l](std::string_view leaf) { return block_tensor_name(l, leaf); };
        if (b.kind == BlockKind::full) {
            file.tensors[name("attn_norm")] = {{d}, b.full.attn_norm};
            file.tensors[name("attn_q")] = {{d, d}, b.full.wq};
            file.tensors[name("attn_k")] = {{d, d}, b.full.wk};
            file.tensors[name("attn_v")] = {{d, d}, b.full.wv};
            file.tensors[name("attn_out")] = {{d, d}, b.full.wo};
            file.tensors[name("ffn_norm")] = {{d}, b.full.ffn_norm};
            file.tensors[name("ffn_gate")] = {{f, d}, b.full.ffn_gate};
            file.tensors[name("ffn_up")] = {{f, d}, b.full.ffn_up};
            file.tensors[name("ffn_down")] = {{d, f}, b.full.ffn_down};
        } else {
            file.tensors[name("mix")] = {{d, d}, b.linear.mix};
            if (b.linear.read_rank > 0) {
                file.tensors[name("read")] = {{b.linear.read_rank, d}, b.linear.read};
                file.tensors[name("write")] = {{d, b.linear.read_rank}, b.linear.write};
            }
        }
    }
    return file;
}

Model load_model(const std::string& path, const std::optional<std::string>& vocab_path) {
    const std::string bytes = read_file_bytes(path);
    TensorFile file = decode_tensor_file(bytes, path);

    std::string vpath;
    if (vocab_path) {
        vpath = *vocab_path;
    } else {
        if (!file.metadata.contains("vocab_file") || !file.metadata["vocab_file"].is_string()) {
            throw Error(ErrorCode::metadata, path + ": metadata lacks 'vocab_file' and no vocabulary was given");
        }
        vpath = (std::filesystem::path(path).parent_path() / file.metadata["vocab_file"].get<std::string>()).string();
    }
    Vocab vocab = Vocab::from_file(vpath);

    std::string name = file.metadata.value("name", std::filesystem::path(path).stem().string());
    std::string id = name + ":" + hex64(fnv1a64(bytes));
    return model_from_tensor_file(file, std::move(vocab), std::move(id));
}

void save_model(const Model& model, const std::string& path) {
    const std::filesystem::path p(path);
    const std::string vocab_name = p.stem().string() + ".vocab";
    TensorFile file = model.to_tensor_file();
    file.metadata["vocab_file"] = vocab_name;
    write_tensor_file(path, file);
    model.vocab.save((p.parent_path() / vocab_name).string());
}

void assign_identifier(Model& model) {
    std::string name = model.metadata.value("name", std::string("model"));
    model.identifier = name + ":" + hex64(fnv1a64(encode_tensor_file(model.to_tensor_file())));
}

} // namespace steerlab
