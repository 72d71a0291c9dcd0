#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace traceprune {

struct ModelConfig {
    int32_t embed_dim = 384;
    int32_t n_heads = 6;
    int32_t n_blocks = 6;
    int32_t ffn_dim = 1536;
    int32_t context_len = 256;
    double dropout = 0.0;
    int32_t vocab_size = 0;  // set from the corpus
    uint64_t seed = 0;

    void validate() const;
};

// Tiny preset used for CI-speed runs.
ModelConfig tiny_model_config();

// Ordered collection of named trainable tensors. Iteration order is fixed at
// construction and identical across runs; the weight tracker and the prune
// masks align to it by name.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool prunable;  // weight matrices and embeddings; biases and norm params excluded
    };

    void add(std::string name, Tensor tensor, bool prunable);

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

    int64_t param_count() const;
    int64_t prunable_count() const;
    // Exact zeros among prunable entries (sparsity accounting).
    int64_t prunable_zeros() const;

    // "name shape count" rows plus a total, for reports.
    std::string breakdown_table() const;

    ParamStore clone() const;

    void zero_grads();

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Allocates and initializes every tensor of the model: token embedding,
// positional embedding, per block Q/K/V (no bias), attention output
// projection, two-layer ReLU FFN, two post-norm layer norms, then a final
// layer norm and the vocabulary projection.
ParamStore build_model(const ModelConfig& cfg);

// Logits [B,T,V] for a batch of token windows. Causal: position t sees only
// tokens <= t. dropout_salt distinguishes the dropout streams of different
// forward passes (the training step index); irrelevant at rate 0.
Tensor model_forward(const ParamStore& params, const ModelConfig& cfg,
                     std::span<const int32_t> tokens, int64_t batch, int64_t seq_len,
                     uint64_t dropout_salt = 0);

// Mean next-token cross-entropy over a batch: tokens and targets are both
// [B*T] flat, targets[i] = the token following tokens[i].
Tensor model_loss(const ParamStore& params, const ModelConfig& cfg,
                  std::span<const int32_t> tokens, std::span<const int32_t> targets,
                  int64_t batch, int64_t seq_len, uint64_t dropout_salt = 0);

}  // namespace traceprune
