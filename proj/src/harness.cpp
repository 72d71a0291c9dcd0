#include "harness.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "checkpoint.hpp"

namespace traceprune {

using nlohmann::json;

// checkpoints store f32 payloads for model/optimizer tensors
static_assert(sizeof(real) == 4, "the harness is built against the f32 engine");

void TrainConfig::validate() const {
    if (steps < 0) fail(Status::InvalidArgument, "train config: steps must be >= 0");
    if (batch_size < 1) fail(Status::InvalidArgument, "train config: batch_size must be >= 1");
    if (learn_rate <= 0.0) fail(Status::InvalidArgument, "train config: learn_rate must be > 0");
    if (split <= 0.0 || split >= 1.0) {
        fail(Status::InvalidArgument, "train config: split must be in (0,1)");
    }
    if (eval_interval < 1) fail(Status::InvalidArgument, "train config: eval_interval must be >= 1");
    if (finetune_steps < 0) fail(Status::InvalidArgument, "train config: finetune_steps must be >= 0");
    if (trace_samples < 0) fail(Status::InvalidArgument, "train config: trace_samples must be >= 0");
}

uint64_t fnv1a64(const void* data, size_t size) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

static std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
    return buf;
}

CorpusData load_corpus(const std::string& path, double split) {
    if (split <= 0.0 || split >= 1.0) {
        fail(Status::InvalidArgument, "corpus: split must be in (0,1)");
    }
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(Status::Io, "corpus: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (text.empty()) fail(Status::InvalidArgument, "corpus: " + path + " is empty");

    CorpusData corpus;
    corpus.path = path;
    corpus.hash = fnv1a64(text.data(), text.size());
    corpus.vocab = Vocab::from_corpus(text);
    std::vector<int32_t> ids = corpus.vocab.encode(text);
    const size_t n_train = static_cast<size_t>(static_cast<double>(ids.size()) * split);
    corpus.train_ids.assign(ids.begin(), ids.begin() + n_train);
    corpus.val_ids.assign(ids.begin() + n_train, ids.end());
    return corpus;
}

double smoothed_loss(std::span<const double> losses, int64_t step, int64_t window) {
    if (step < 1 || step > static_cast<int64_t>(losses.size())) {
        fail(Status::InvalidArgument, "smoothed_loss: step outside the recorded range");
    }
    const int64_t begin = std::max<int64_t>(0, step - window);
    double acc = 0.0;
    for (int64_t i = begin; i < step; ++i) acc += losses[i];
    return acc / static_cast<double>(step - begin);
}

// ----------------------------- sweep report -----------------------------

std::string SweepReport::csv() const {
    std::string out = "target_compression,achieved_compression,prune_rate,val_loss,baseline_val_loss\n";
    char buf[160];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6g,%.6g,%.6g\n", r.target, r.achieved,
                      r.prune_rate, r.val_loss, r.baseline_val_loss);
        out += buf;
    }
    return out;
}

void SweepReport::write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(Status::Io, "sweep: cannot open " + path + " for writing");
    f << csv();
    if (!f) fail(Status::Io, "sweep: write failed for " + path);
}

std::string SweepReport::table() const {
    std::ostringstream os;
    char buf[160];
    os << "target  achieved  prune_rate  val_loss  baseline\n";
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%6.3f  %8.4f  %10.4f  %8.4f  %8.4f\n", r.target,
                      r.achieved, r.prune_rate, r.val_loss, r.baseline_val_loss);
        os << buf;
    }
    os << "seed " << seed << ", config " << hex64(config_hash) << ", corpus "
       << hex64(corpus_hash) << "\n";
    return os.str();
}

// ----------------------------- config json -----------------------------

static json model_config_json(const ModelConfig& m) {
    return json{{"embed_dim", m.embed_dim},   {"n_heads", m.n_heads},
                {"n_blocks", m.n_blocks},     {"ffn_dim", m.ffn_dim},
                {"context_len", m.context_len}, {"dropout", m.dropout},
                {"vocab_size", m.vocab_size}, {"seed", m.seed}};
}

static ModelConfig model_config_from_json(const json& j) {
    ModelConfig m;
    m.embed_dim = j.at("embed_dim").get<int32_t>();
    m.n_heads = j.at("n_heads").get<int32_t>();
    m.n_blocks = j.at("n_blocks").get<int32_t>();
    m.ffn_dim = j.at("ffn_dim").get<int32_t>();
    m.context_len = j.at("context_len").get<int32_t>();
    m.dropout = j.at("dropout").get<double>();
    m.vocab_size = j.at("vocab_size").get<int32_t>();
    m.seed = j.at("seed").get<uint64_t>();
    return m;
}

static json train_config_json(const TrainConfig& t) {
    return json{{"steps", t.steps},
                {"batch_size", t.batch_size},
                {"learn_rate", t.learn_rate},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"weight_decay", t.weight_decay},
                {"eval_interval", t.eval_interval},
                {"finetune_steps", t.finetune_steps},
                {"split", t.split},
                {"trace_samples", t.trace_samples},
                {"seed", t.seed}};
}

static TrainConfig train_config_from_json(const json& j) {
    TrainConfig t;
    t.steps = j.at("steps").get<int64_t>();
    t.batch_size = j.at("batch_size").get<int32_t>();
    t.learn_rate = j.at("learn_rate").get<double>();
    t.beta1 = j.at("beta1").get<double>();
    t.beta2 = j.at("beta2").get<double>();
    t.adam_eps = j.at("adam_eps").get<double>();
    t.weight_decay = j.at("weight_decay").get<double>();
    t.eval_interval = j.at("eval_interval").get<int64_t>();
    t.finetune_steps = j.at("finetune_steps").get<int64_t>();
    t.split = j.at("split").get<double>();
    t.trace_samples = j.at("trace_samples").get<int64_t>();
    t.seed = j.at("seed").get<uint64_t>();
    return t;
}

static AdamConfig adam_config(const TrainConfig& t) {
    AdamConfig a;
    a.learn_rate = t.learn_rate;
    a.beta1 = t.beta1;
    a.beta2 = t.beta2;
    a.eps = t.adam_eps;
    a.weight_decay = t.weight_decay;
    return a;
}

static uint64_t config_fingerprint(const ModelConfig& m, const TrainConfig& t) {
    const std::string s = model_config_json(m).dump() + train_config_json(t).dump();
    return fnv1a64(s.data(), s.size());
}

// ----------------------------- Run -----------------------------

Run Run::create(const std::string& corpus_path, const ModelConfig& mcfg,
                const TrainConfig& tcfg) {
    tcfg.validate();
    Run r;
    r.corpus_ = load_corpus(corpus_path, tcfg.split);
    r.mcfg_ = mcfg;
    r.mcfg_.vocab_size = r.corpus_.vocab.size();
    r.mcfg_.validate();
    r.tcfg_ = tcfg;
    r.model_ = build_model(r.mcfg_);
    r.opt_ = AdamW(adam_config(tcfg), r.model_);
    r.tracker_ = TrackerState(r.model_);
    r.traces_ = TraceSampler(r.model_, tcfg.trace_samples, tcfg.seed);
    return r;
}

void Run::sample_batch(int64_t step, std::vector<int32_t>& xs, std::vector<int32_t>& ys) const {
    const int64_t t = mcfg_.context_len;
    const int64_t b = tcfg_.batch_size;
    const auto& train = corpus_.train_ids;
    if (static_cast<int64_t>(train.size()) < t + 1) {
        fail(Status::InvalidArgument,
             "train: corpus train split has " + std::to_string(train.size()) +
                 " tokens, need at least context_len + 1 = " + std::to_string(t + 1));
    }
    // one independent stream per (seed, step); resuming from a checkpoint
    // reproduces the exact batch sequence
    SplitMix64 rng(mix_seed(tcfg_.seed ^ 0xb41c5a3d00000000ull, static_cast<uint64_t>(step)));
    const uint64_t span = train.size() - static_cast<size_t>(t);
    xs.resize(static_cast<size_t>(b * t));
    ys.resize(static_cast<size_t>(b * t));
    for (int64_t i = 0; i < b; ++i) {
        const int64_t off = static_cast<int64_t>(rng.below(span));
        std::memcpy(xs.data() + i * t, train.data() + off, sizeof(int32_t) * t);
        std::memcpy(ys.data() + i * t, train.data() + off + 1, sizeof(int32_t) * t);
    }
}

double Run::current_batch_loss() const {
    NoGradGuard no_grad;
    std::vector<int32_t> xs, ys;
    sample_batch(step_, xs, ys);
    Tensor loss = model_loss(model_, mcfg_, xs, ys, tcfg_.batch_size, mcfg_.context_len);
    return static_cast<double>(loss.item());
}

double Run::train_step() {
    std::vector<int32_t> xs, ys;
    sample_batch(step_, xs, ys);
    Tensor loss = model_loss(model_, mcfg_, xs, ys, tcfg_.batch_size, mcfg_.context_len,
                             static_cast<uint64_t>(step_));
    const double lv = static_cast<double>(loss.item());
    if (!std::isfinite(lv)) {
        fail(Status::Diverged, "training diverged at step " + std::to_string(step_) +
                                   ": loss is not finite");
    }
    model_.zero_grads();
    backward(loss);
    if (mask_) mask_gradients(model_, *mask_);
    opt_.step(model_);
    if (!mask_) {
        tracker_.update(model_);
        traces_.record(model_, step_);
    }
    ++step_;
    step_losses_.push_back(lv);
    return lv;
}

void Run::train(int64_t n) {
    if (n < 0) fail(Status::InvalidArgument, "train: negative step count");
    if (n == 0) return;
    for (int64_t i = 0; i < n; ++i) {
        train_step();
        const bool at_interval = step_ % tcfg_.eval_interval == 0;
        const bool last = i == n - 1;
        if (at_interval || last) {
            const int64_t window =
                std::min<int64_t>(tcfg_.eval_interval, static_cast<int64_t>(step_losses_.size()));
            const double train_loss =
                smoothed_loss(step_losses_, static_cast<int64_t>(step_losses_.size()), window);
            const double val_loss = eval();
            if (loss_log_.empty() || loss_log_.back().step != step_) {
                loss_log_.push_back({step_, train_loss, val_loss});
            }
            if (last && !mask_) {
                baseline_val_loss_ = val_loss;
                baseline_recorded_ = true;
            }
        }
    }
}

double Run::eval() const {
    NoGradGuard no_grad;
    const auto& val = corpus_.val_ids;
    if (val.size() < 2) {
        fail(Status::State, "eval: validation split has fewer than 2 tokens");
    }
    const int64_t t = std::min<int64_t>(mcfg_.context_len, static_cast<int64_t>(val.size()) - 1);
    std::vector<int64_t> offsets;
    for (int64_t off = 0; off + t < static_cast<int64_t>(val.size()); off += t) {
        offsets.push_back(off);
    }
    double loss_sum = 0.0;
    int64_t tokens = 0;
    std::vector<int32_t> xs, ys;
    for (size_t begin = 0; begin < offsets.size(); begin += tcfg_.batch_size) {
        const int64_t b =
            std::min<int64_t>(tcfg_.batch_size, static_cast<int64_t>(offsets.size() - begin));
        xs.resize(static_cast<size_t>(b * t));
        ys.resize(static_cast<size_t>(b * t));
        for (int64_t i = 0; i < b; ++i) {
            const int64_t off = offsets[begin + i];
            std::memcpy(xs.data() + i * t, val.data() + off, sizeof(int32_t) * t);
            std::memcpy(ys.data() + i * t, val.data() + off + 1, sizeof(int32_t) * t);
        }
        Tensor loss = model_loss(model_, mcfg_, xs, ys, b, t);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(b * t);
        tokens += b * t;
    }
    return loss_sum / static_cast<double>(tokens);
}

void Run::install_mask(PruneMask mask) {
    apply_mask(model_, mask);
    mask_ = std::move(mask);
    // fresh moments: stale momentum on pruned weights would fight the mask
    opt_ = AdamW(adam_config(tcfg_), model_);
}

void Run::prune_target(double target) {
    install_mask(mask_for_target(importance_scores(tracker_, model_), target));
}

void Run::prune_rate(double rate, bool per_layer_sigma) {
    ImportanceVector scores = importance_scores(tracker_, model_);
    if (per_layer_sigma) {
        install_mask(build_mask_per_tensor(scores, rate));
    } else {
        install_mask(build_mask(scores, compute_threshold(scores, rate)));
    }
}

void Run::finetune(int64_t n) {
    if (!mask_) fail(Status::State, "finetune: no prune mask installed");
    train(n);
}

void Run::set_finetune_steps(int64_t n) {
    if (n < 0) fail(Status::InvalidArgument, "finetune_steps must be >= 0");
    tcfg_.finetune_steps = n;
}

SweepReport Run::sweep(std::vector<double> targets, int jobs, const std::string& csv_path) {
    if (tracker_.step() < 1) {
        fail(Status::State, "sweep: run some training first (tracker holds no updates)");
    }
    if (mask_) fail(Status::State, "sweep: run starts from an unpruned model");
    for (double t : targets) {
        if (t < 0.0 || t >= 1.0) {
            fail(Status::InvalidArgument, "sweep: target " + std::to_string(t) + " outside [0,1)");
        }
    }
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    if (targets.empty() || targets.front() != 0.0) {
        targets.insert(targets.begin(), 0.0);
    }

    std::ostringstream snapshot;
    save(snapshot);
    const std::string blob = snapshot.str();
    const double baseline = eval();

    SweepReport report;
    report.seed = tcfg_.seed;
    report.config_hash = config_fingerprint(mcfg_, tcfg_);
    report.corpus_hash = corpus_.hash;
    report.rows.resize(targets.size());
    report.rows[0] = {0.0, 0.0, 0.0, baseline, baseline};

    auto run_target = [&](size_t i) {
        std::istringstream in(blob);
        Run worker = Run::load(in, corpus_);
        worker.prune_target(targets[i]);
        worker.finetune(worker.tcfg_.finetune_steps);
        report.rows[i] = {targets[i], worker.mask_->achieved_compression,
                          worker.mask_->prune_rate, worker.eval(), baseline};
    };

    if (jobs <= 1) {
        for (size_t i = 1; i < targets.size(); ++i) run_target(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{1};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        const int workers = std::min<int>(jobs, static_cast<int>(targets.size()) - 1);
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                for (size_t i = next.fetch_add(1); i < targets.size(); i = next.fetch_add(1)) {
                    try {
                        run_target(i);
                    } catch (...) {
                        std::scoped_lock lock(error_mutex);
                        if (!first_error) first_error = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    if (!csv_path.empty()) report.write_csv(csv_path);
    return report;
}

// ----------------------------- persistence -----------------------------

template <typename T>
static std::vector<uint8_t> to_bytes(std::span<const T> values) {
    std::vector<uint8_t> bytes(values.size() * sizeof(T));
    std::memcpy(bytes.data(), values.data(), bytes.size());
    return bytes;
}

static std::vector<uint64_t> to_dims(const Shape& shape) {
    return std::vector<uint64_t>(shape.begin(), shape.end());
}

static Shape from_dims(const std::vector<uint64_t>& dims) {
    return Shape(dims.begin(), dims.end());
}

void Run::save(std::ostream& out) const {
    Container c;
    for (const auto& e : model_.entries()) {
        c.tensors.push_back({e.name, 0, to_dims(e.tensor.shape()), to_bytes(e.tensor.data())});
    }
    for (size_t i = 0; i < model_.size(); ++i) {
        const auto& e = model_.entries()[i];
        c.tensors.push_back({"opt.m." + e.name, 0, to_dims(e.tensor.shape()),
                             to_bytes(std::span<const real>(opt_.moment1()[i]))});
        c.tensors.push_back({"opt.v." + e.name, 0, to_dims(e.tensor.shape()),
                             to_bytes(std::span<const real>(opt_.moment2()[i]))});
    }
    for (const auto& s : tracker_.shadows()) {
        c.tensors.push_back({"tracker." + s.name, 1, to_dims(s.shape),
                             to_bytes(std::span<const double>(s.value))});
    }
    if (mask_) {
        for (const auto& m : mask_->entries) {
            c.tensors.push_back({"mask." + m.name, 2, to_dims(m.shape), pack_bits(m.keep)});
        }
    }

    json meta;
    meta["format"] = "traceprune-checkpoint";
    meta["step"] = step_;
    meta["adam_t"] = opt_.step_count();
    meta["tracker_step"] = tracker_.step();
    meta["corpus_hash"] = hex64(corpus_.hash);
    meta["vocab"] = json::array();
    for (uint8_t ch : corpus_.vocab.chars()) meta["vocab"].push_back(static_cast<int>(ch));
    meta["model_config"] = model_config_json(mcfg_);
    meta["train_config"] = train_config_json(tcfg_);
    if (baseline_recorded_) meta["baseline_val_loss"] = baseline_val_loss_;
    if (mask_) {
        meta["mask_info"] = json{{"target", mask_->target_compression},
                                 {"achieved", mask_->achieved_compression},
                                 {"threshold", mask_->threshold},
                                 {"rate", mask_->prune_rate}};
    }
    c.meta_json = meta.dump();
    write_container(out, c);
}

void Run::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(Status::Io, "checkpoint: cannot open " + path + " for writing");
    save(f);
    f.flush();
    if (!f) fail(Status::Io, "checkpoint: write failed for " + path);
}

Run Run::load(std::istream& in, CorpusData corpus) {
    Container c = read_container(in);
    json meta;
    try {
        meta = json::parse(c.meta_json);
    } catch (const json::exception& e) {
        fail(Status::Format, std::string("checkpoint: bad metadata block: ") + e.what());
    }
    try {
        if (meta.at("format") != "traceprune-checkpoint") {
            fail(Status::Format, "checkpoint: unexpected container format tag");
        }
        Run r;
        r.corpus_ = std::move(corpus);
        r.mcfg_ = model_config_from_json(meta.at("model_config"));
        r.tcfg_ = train_config_from_json(meta.at("train_config"));
        if (meta.at("corpus_hash").get<std::string>() != hex64(r.corpus_.hash)) {
            fail(Status::InvalidArgument,
                 "checkpoint: corpus does not match the one this checkpoint was trained on "
                 "(hash mismatch)");
        }
        if (r.mcfg_.vocab_size != r.corpus_.vocab.size()) {
            fail(Status::Format, "checkpoint: vocab size disagrees with the corpus");
        }

        r.model_ = build_model(r.mcfg_);
        for (auto& e : r.model_.entries()) {
            const ContainerTensor* t = c.find(e.name);
            if (!t || t->dtype != 0 || from_dims(t->dims) != e.tensor.shape()) {
                fail(Status::Format, "checkpoint: missing or mismatched tensor " + e.name);
            }
            std::memcpy(e.tensor.data().data(), t->bytes.data(), t->bytes.size());
        }

        r.opt_ = AdamW(adam_config(r.tcfg_), r.model_);
        std::vector<std::vector<real>> m1, m2;
        for (const auto& e : r.model_.entries()) {
            for (auto* dst : {&m1, &m2}) {
                const std::string key = (dst == &m1 ? "opt.m." : "opt.v.") + e.name;
                const ContainerTensor* t = c.find(key);
                if (!t || t->dtype != 0 || from_dims(t->dims) != e.tensor.shape()) {
                    fail(Status::Format, "checkpoint: missing or mismatched tensor " + key);
                }
                std::vector<real> buf(t->numel());
                std::memcpy(buf.data(), t->bytes.data(), t->bytes.size());
                dst->push_back(std::move(buf));
            }
        }
        r.opt_.restore(std::move(m1), std::move(m2), meta.at("adam_t").get<int64_t>());

        std::vector<TrackerState::Shadow> shadows;
        for (const auto& e : r.model_.entries()) {
            const ContainerTensor* t = c.find("tracker." + e.name);
            if (!t || t->dtype != 1 || from_dims(t->dims) != e.tensor.shape()) {
                fail(Status::Format, "checkpoint: missing or mismatched tensor tracker." + e.name);
            }
            TrackerState::Shadow s;
            s.name = e.name;
            s.shape = e.tensor.shape();
            s.value.resize(t->numel());
            std::memcpy(s.value.data(), t->bytes.data(), t->bytes.size());
            shadows.push_back(std::move(s));
        }
        r.tracker_.restore(std::move(shadows), meta.at("tracker_step").get<int64_t>());

        if (meta.contains("mask_info")) {
            PruneMask mask;
            const json& mi = meta.at("mask_info");
            mask.target_compression = mi.at("target").get<double>();
            mask.achieved_compression = mi.at("achieved").get<double>();
            mask.threshold = mi.at("threshold").get<double>();
            mask.prune_rate = mi.at("rate").get<double>();
            for (const auto& e : r.model_.entries()) {
                if (!e.prunable) continue;
                const ContainerTensor* t = c.find("mask." + e.name);
                if (!t || t->dtype != 2 || from_dims(t->dims) != e.tensor.shape()) {
                    fail(Status::Format, "checkpoint: missing or mismatched tensor mask." + e.name);
                }
                PruneMask::Entry entry;
                entry.name = e.name;
                entry.shape = e.tensor.shape();
                entry.keep = unpack_bits(t->bytes, t->numel());
                mask.entries.push_back(std::move(entry));
            }
            r.mask_ = std::move(mask);
        }

        r.step_ = meta.at("step").get<int64_t>();
        if (meta.contains("baseline_val_loss")) {
            r.baseline_val_loss_ = meta.at("baseline_val_loss").get<double>();
            r.baseline_recorded_ = true;
        }
        r.traces_ = TraceSampler(r.model_, r.tcfg_.trace_samples, r.tcfg_.seed);
        return r;
    } catch (const json::exception& e) {
        fail(Status::Format, std::string("checkpoint: metadata field error: ") + e.what());
    }
}

Run Run::load(const std::string& checkpoint_path, const std::string& corpus_path) {
    std::ifstream f(checkpoint_path, std::ios::binary);
    if (!f) fail(Status::Io, "checkpoint: cannot open " + checkpoint_path);
    // read the split fraction from the checkpoint before loading the corpus
    Container c = read_container(f);
    double split;
    try {
        split = json::parse(c.meta_json).at("train_config").at("split").get<double>();
    } catch (const json::exception& e) {
        fail(Status::Format, std::string("checkpoint: bad metadata block: ") + e.what());
    }
    CorpusData corpus = load_corpus(corpus_path, split);
    f.clear();
    f.seekg(0);
    return load(f, std::move(corpus));
}

// ----------------------------- reports -----------------------------

void Run::write_loss_log(const std::string& path) const {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail(Status::Io, "loss log: cannot open " + path);
    std::fprintf(f, "step,train_loss,val_loss\n");
    for (const LossLogRow& r : loss_log_) {
        std::fprintf(f, "%" PRId64 ",%.6f,%.6f\n", r.step, r.train_loss, r.val_loss);
    }
    if (std::fclose(f) != 0) fail(Status::Io, "loss log: write failed for " + path);
}

void Run::write_traces(const std::string& path) const { traces_.write_csv(path); }

std::string Run::info_json() const {
    json j;
    j["model_config"] = model_config_json(mcfg_);
    j["train_config"] = train_config_json(tcfg_);
    j["config_hash"] = hex64(config_fingerprint(mcfg_, tcfg_));
    j["corpus"] = json{{"path", corpus_.path},
                       {"hash", hex64(corpus_.hash)},
                       {"vocab_size", corpus_.vocab.size()},
                       {"train_tokens", corpus_.train_ids.size()},
                       {"val_tokens", corpus_.val_ids.size()}};
    json state;
    state["step"] = step_;
    state["param_count"] = model_.param_count();
    state["prunable_count"] = model_.prunable_count();
    if (mask_) {
        state["compression"] = mask_->achieved_compression;
        state["prune_rate"] = mask_->prune_rate;
    }
    if (baseline_recorded_) state["baseline_val_loss"] = baseline_val_loss_;
    j["state"] = state;
    return j.dump(2);
}

std::string greedy_generate(const Run& run, std::string_view prompt, int64_t count) {
    if (prompt.empty()) fail(Status::InvalidArgument, "generate: prompt must be non-empty");
    NoGradGuard no_grad;
    const ModelConfig& cfg = run.model_config();
    std::vector<int32_t> ids = run.corpus().vocab.encode(prompt);
    for (int64_t i = 0; i < count; ++i) {
        const int64_t t = std::min<int64_t>(cfg.context_len, static_cast<int64_t>(ids.size()));
        std::span<const int32_t> window(ids.data() + ids.size() - t, static_cast<size_t>(t));
        Tensor out = model_forward(run.model(), cfg, window, 1, t);
        std::span<const real> data = out.data();
        const int64_t v = cfg.vocab_size;
        const real* last = data.data() + (t - 1) * v;
        int32_t best = 0;
        for (int32_t j = 1; j < v; ++j) {
            if (last[j] > last[best]) best = j;
        }
        ids.push_back(best);
    }
    return run.corpus().vocab.decode(ids);
}

}  // namespace traceprune
