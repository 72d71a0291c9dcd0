#include "model.hpp"

#include <cmath>
#include <sstream>

namespace traceprune {

void ModelConfig::validate() const {
    if (embed_dim <= 0 || n_heads <= 0 || n_blocks <= 0 || ffn_dim <= 0 || context_len <= 0) {
        fail(Status::InvalidArgument, "model config: all dimensions must be positive");
    }
    if (embed_dim % n_heads != 0) {
        fail(Status::InvalidArgument,
             "model config: embed_dim " + std::to_string(embed_dim) +
                 " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (vocab_size < 2) {
        fail(Status::InvalidArgument,
             "model config: vocab_size must be >= 2, got " + std::to_string(vocab_size));
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        fail(Status::InvalidArgument, "model config: dropout must be in [0,1)");
    }
}

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.embed_dim = 128;
    cfg.n_heads = 4;
    cfg.n_blocks = 4;
    cfg.ffn_dim = 512;
    cfg.context_len = 64;
    return cfg;
}

// ----------------------------- ParamStore -----------------------------

void ParamStore::add(std::string name, Tensor tensor, bool prunable) {
    if (index_.count(name)) fail(Status::Internal, "param store: duplicate name " + name);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(tensor), prunable});
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(Status::InvalidArgument, "param store: no entry " + name);
    return entries_[it->second].tensor;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(Status::InvalidArgument, "param store: no entry " + name);
    return entries_[it->second].tensor;
}

int64_t ParamStore::param_count() const {
    int64_t n = 0;
    for (const Entry& e : entries_) n += e.tensor.numel();
    return n;
}

int64_t ParamStore::prunable_count() const {
    int64_t n = 0;
    for (const Entry& e : entries_) {
        if (e.prunable) n += e.tensor.numel();
    }
    return n;
}

int64_t ParamStore::prunable_zeros() const {
    int64_t n = 0;
    for (const Entry& e : entries_) {
        if (!e.prunable) continue;
        for (real v : e.tensor.data()) {
            if (v == real(0)) ++n;
        }
    }
    return n;
}

std::string ParamStore::breakdown_table() const {
    std::ostringstream os;
    for (const Entry& e : entries_) {
        os << e.name << " " << shape_str(e.tensor.shape()) << " " << e.tensor.numel()
           << (e.prunable ? "" : "  [not prunable]") << "\n";
    }
    os << "total " << param_count() << " (prunable " << prunable_count() << ")\n";
    return os.str();
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const Entry& e : entries_) {
        out.add(e.name, e.tensor.clone_detached(), e.prunable);
    }
    return out;
}

void ParamStore::zero_grads() {
    for (Entry& e : entries_) e.tensor.zero_grad();
}

// ----------------------------- construction -----------------------------

ParamStore build_model(const ModelConfig& cfg) {
    cfg.validate();
    ParamStore params;
    SplitMix64 rng(mix_seed(cfg.seed, 0x1));
    const double init_std = 0.02;
    const int64_t c = cfg.embed_dim, v = cfg.vocab_size, f = cfg.ffn_dim;

    auto weight = [&](const Shape& shape) { return Tensor::randn(shape, rng, init_std, true); };
    auto zeros = [&](const Shape& shape) { return Tensor::zeros(shape, true); };
    auto ones = [&](const Shape& shape) { return Tensor::full(shape, real(1), true); };

    params.add("tok_emb", weight({v, c}), true);
    params.add("pos_emb", weight({cfg.context_len, c}), true);
    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        params.add(p + "attn.wq", weight({c, c}), true);
        params.add(p + "attn.wk", weight({c, c}), true);
        params.add(p + "attn.wv", weight({c, c}), true);
        params.add(p + "attn.proj.w", weight({c, c}), true);
        params.add(p + "attn.proj.b", zeros({c}), false);
        params.add(p + "ln1.g", ones({c}), false);
        params.add(p + "ln1.b", zeros({c}), false);
        params.add(p + "ffn.w1", weight({c, f}), true);
        params.add(p + "ffn.b1", zeros({f}), false);
        params.add(p + "ffn.w2", weight({f, c}), true);
        params.add(p + "ffn.b2", zeros({c}), false);
        params.add(p + "ln2.g", ones({c}), false);
        params.add(p + "ln2.b", zeros({c}), false);
    }
    params.add("ln_f.g", ones({c}), false);
    params.add("ln_f.b", zeros({c}), false);
    params.add("head.w", weight({c, v}), true);
    params.add("head.b", zeros({v}), false);
    return params;
}

// ----------------------------- forward -----------------------------

static constexpr real kLayerNormEps = real(1e-5);

Tensor model_forward(const ParamStore& params, const ModelConfig& cfg,
                     std::span<const int32_t> tokens, int64_t batch, int64_t seq_len,
                     uint64_t dropout_salt) {
    if (seq_len > cfg.context_len) {
        fail(Status::InvalidArgument, "forward: sequence length " + std::to_string(seq_len) +
                                          " exceeds context length " +
                                          std::to_string(cfg.context_len));
    }
    if (batch <= 0 || seq_len <= 0 ||
        static_cast<int64_t>(tokens.size()) != batch * seq_len) {
        fail(Status::InvalidArgument, "forward: token buffer does not match batch dims");
    }
    const int64_t c = cfg.embed_dim, h = cfg.n_heads, hd = c / h;
    const real att_scale = real(1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)));
    const bool use_dropout = cfg.dropout > 0.0;
    uint64_t drop_stream = 0;
    auto maybe_dropout = [&](const Tensor& t) {
        if (!use_dropout) return t;
        const uint64_t stream = (dropout_salt << 16) + drop_stream++;
        return dropout(t, cfg.dropout, mix_seed(cfg.seed ^ 0x44d0u, stream));
    };

    // token + positional embeddings
    Tensor x = embedding(params.at("tok_emb"), tokens, {batch, seq_len});
    {
        // the positional table broadcasts over the batch axis; slice the
        // first seq_len rows when the window is shorter than the context
        const Tensor& pos = params.at("pos_emb");
        Tensor pos_rows = pos;
        if (seq_len < cfg.context_len) {
            std::vector<int32_t> rows(static_cast<size_t>(seq_len));
            for (int64_t i = 0; i < seq_len; ++i) rows[i] = static_cast<int32_t>(i);
            pos_rows = embedding(pos, rows, {seq_len});
        }
        x = add(x, pos_rows);
    }

    for (int b = 0; b < cfg.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        // --- multi-head causal self-attention ---
        Tensor x2 = reshape(x, {batch * seq_len, c});
        auto heads = [&](const Tensor& w) {
            Tensor t = matmul(x2, w);                                // [B*T, C]
            t = reshape(t, {batch, seq_len, h, hd});
            t = permute(t, {0, 2, 1, 3});                            // [B, H, T, D]
            return reshape(t, {batch * h, seq_len, hd});
        };
        Tensor q = heads(params.at(p + "attn.wq"));
        Tensor k = heads(params.at(p + "attn.wk"));
        Tensor val = heads(params.at(p + "attn.wv"));
        Tensor scores = scale(bmm_nt(q, k), att_scale);              // [B*H, T, T]
        Tensor probs = causal_softmax(scores);
        probs = maybe_dropout(probs);
        Tensor ctx = bmm(probs, val);                                // [B*H, T, D]
        ctx = reshape(ctx, {batch, h, seq_len, hd});
        ctx = permute(ctx, {0, 2, 1, 3});                            // [B, T, H, D]
        ctx = reshape(ctx, {batch * seq_len, c});
        Tensor att = add(matmul(ctx, params.at(p + "attn.proj.w")), params.at(p + "attn.proj.b"));
        att = maybe_dropout(att);
        // post-norm: normalize the residual sum
        x = reshape(x, {batch * seq_len, c});
        x = layer_norm(add(x, att), params.at(p + "ln1.g"), params.at(p + "ln1.b"),
                       kLayerNormEps);
        // --- feed-forward ---
        Tensor ff = add(matmul(x, params.at(p + "ffn.w1")), params.at(p + "ffn.b1"));
        ff = relu(ff);
        ff = add(matmul(ff, params.at(p + "ffn.w2")), params.at(p + "ffn.b2"));
        ff = maybe_dropout(ff);
        x = layer_norm(add(x, ff), params.at(p + "ln2.g"), params.at(p + "ln2.b"),
                       kLayerNormEps);
        x = reshape(x, {batch, seq_len, c});
    }

    Tensor x2 = reshape(x, {batch * seq_len, c});
    x2 = layer_norm(x2, params.at("ln_f.g"), params.at("ln_f.b"), kLayerNormEps);
    Tensor logits = add(matmul(x2, params.at("head.w")), params.at("head.b"));
    return reshape(logits, {batch, seq_len, cfg.vocab_size});
}

Tensor model_loss(const ParamStore& params, const ModelConfig& cfg,
                  std::span<const int32_t> tokens, std::span<const int32_t> targets,
                  int64_t batch, int64_t seq_len, uint64_t dropout_salt) {
    if (tokens.size() != targets.size()) {
        fail(Status::InvalidArgument, "loss: tokens and targets differ in length");
    }
    Tensor logits = model_forward(params, cfg, tokens, batch, seq_len, dropout_salt);
    return cross_entropy(reshape(logits, {batch * seq_len, cfg.vocab_size}), targets);
}

}  // namespace traceprune
