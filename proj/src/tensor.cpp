#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <unordered_set>

#ifdef TRACEPRUNE_USE_BLAS
#include <cblas.h>
#endif

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace traceprune {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

// ----------------------------- threads -----------------------------

static int clamp_threads(int n) { return std::clamp(n, 1, 256); }

static int initial_threads() {
    if (const char* env = std::getenv("TRACEPRUNE_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return clamp_threads(n);
    }
    return 1;
}

static int g_threads = 0;

int engine_threads() {
    if (g_threads == 0) set_engine_threads(initial_threads());
    return g_threads;
}

void set_engine_threads(int n) {
    g_threads = clamp_threads(n);
#ifdef TRACEPRUNE_USE_BLAS
    openblas_set_num_threads(g_threads);
#endif
#ifdef __GLIBC__
    // training allocates and frees hundreds of MB of activation buffers per
    // step; keep those pages in the arena instead of returning them to the
    // kernel on every free
    static bool tuned = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)tuned;
#endif
}

// ----------------------------- gemm kernel -----------------------------
// Row-major C[m,n] (+)= op(A) * op(B). All accumulation orders are fixed, so
// results are identical from run to run for a given thread configuration.

#ifdef TRACEPRUNE_USE_BLAS
static void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                      const float* a, int lda, const float* b, int ldb, float beta, float* c,
                      int ldc) {
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, 1.0f, a, lda, b, ldb, beta, c, ldc);
}

static void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                      const double* a, int lda, const double* b, int ldb, double beta, double* c,
                      int ldc) {
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, 1.0, a, lda, b, ldb, beta, c, ldc);
}
#endif

static void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
                 const real* a, int64_t lda, const real* b, int64_t ldb, real beta,
                 real* c, int64_t ldc) {
    engine_threads();  // make sure the BLAS thread cap is applied
#ifdef TRACEPRUNE_USE_BLAS
    blas_gemm(trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, (int)m,
              (int)n, (int)k, a, (int)lda, b, (int)ldb, beta, c, (int)ldc);
#else
    if (beta == real(0)) {
        for (int64_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, sizeof(real) * n);
    }
    if (!trans_a && !trans_b) {
        for (int64_t i = 0; i < m; ++i) {
            real* crow = c + i * ldc;
            for (int64_t p = 0; p < k; ++p) {
                const real av = a[i * lda + p];
                const real* brow = b + p * ldb;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (int64_t i = 0; i < m; ++i) {
            const real* arow = a + i * lda;
            real* crow = c + i * ldc;
            for (int64_t j = 0; j < n; ++j) {
                const real* brow = b + j * ldb;
                real acc = 0;
                for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += acc;
            }
        }
    } else if (trans_a && !trans_b) {
        for (int64_t p = 0; p < k; ++p) {
            const real* arow = a + p * lda;
            const real* brow = b + p * ldb;
            for (int64_t i = 0; i < m; ++i) {
                const real av = arow[i];
                real* crow = c + i * ldc;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (int64_t i = 0; i < m; ++i) {
            real* crow = c + i * ldc;
            for (int64_t p = 0; p < k; ++p) {
                const real av = a[p * lda + i];
                for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
            }
        }
    }
#endif
}

// ----------------------------- grad mode -----------------------------

static thread_local int g_no_grad_depth = 0;

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_recording() { return g_no_grad_depth == 0; }

// ----------------------------- node helpers -----------------------------

static NodePtr make_node(Shape shape, const char* op) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data.resize(static_cast<size_t>(node->numel()));
    node->op = op;
    return node;
}

static NodePtr op_node(Shape shape, const char* op,
                       std::initializer_list<NodePtr> parents) {
    NodePtr node = make_node(std::move(shape), op);
    if (grad_recording()) {
        node->parents.assign(parents);
        for (const NodePtr& p : node->parents) {
            if (p->requires_grad) node->requires_grad = true;
        }
    }
    return node;
}

static void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) fail(Status::InvalidArgument, std::string(op) + ": undefined tensor");
}

// Accumulation target inside one backward pass; allocated lazily by the
// engine, so a non-empty buffer means "this parent wants gradient".
static real* pass_buf(const NodePtr& p) {
    return p->gpass.empty() ? nullptr : p->gpass.data();
}

// ----------------------------- Tensor -----------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    NodePtr node = make_node(shape, "leaf");
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::full(const Shape& shape, real value, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    std::fill(t.node()->data.begin(), t.node()->data.end(), value);
    return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<real> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        fail(Status::InvalidArgument,
             "from_data: shape " + shape_str(shape) + " wants " +
                 std::to_string(shape_numel(shape)) + " values, got " +
                 std::to_string(values.size()));
    }
    NodePtr node = std::make_shared<TensorNode>();
    node->shape = shape;
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::randn(const Shape& shape, SplitMix64& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    for (real& v : t.node()->data) v = static_cast<real>(rng.normal() * stddev);
    return t;
}

std::span<real> Tensor::grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), real(0));
    return {node_->grad.data(), node_->grad.size()};
}

std::span<const real> Tensor::grad() const {
    if (node_->grad.empty())
        fail(Status::State, "grad(): no gradient has been accumulated for this tensor");
    return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), real(0));
}

real Tensor::item() const {
    if (numel() != 1)
        fail(Status::InvalidArgument, "item(): tensor has shape " + shape_str(shape()));
    return node_->data[0];
}

Tensor Tensor::clone_detached() const {
    NodePtr node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = node_->requires_grad;
    return Tensor(node);
}

// ----------------------------- elementwise -----------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool suffix = sb.size() <= sa.size() &&
                        std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
    if (!suffix) {
        fail(Status::InvalidArgument, "add: shape " + shape_str(sb) +
                                          " is not a trailing suffix of " + shape_str(sa));
    }
    NodePtr out = op_node(sa, "add", {a.node(), b.node()});
    const int64_t n = out->numel();
    const int64_t bn = b.numel();
    const real* pa = a.node()->data.data();
    const real* pb = b.node()->data.data();
    real* po = out->data.data();
    if (bn == n) {
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    } else {
        for (int64_t row = 0; row < n / bn; ++row) {
            const real* pr = pa + row * bn;
            real* orow = po + row * bn;
            for (int64_t i = 0; i < bn; ++i) orow[i] = pr[i] + pb[i];
        }
    }
    out->backward_fn = [n, bn](TensorNode& self) {
        const real* g = self.gpass.data();
        if (real* ga = pass_buf(self.parents[0])) {
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (real* gb = pass_buf(self.parents[1])) {
            if (bn == n) {
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            } else {
                for (int64_t row = 0; row < n / bn; ++row) {
                    const real* grow = g + row * bn;
                    for (int64_t i = 0; i < bn; ++i) gb[i] += grow[i];
                }
            }
        }
    };
    return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    if (a.shape() != b.shape()) {
        fail(Status::InvalidArgument,
             "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    NodePtr out = op_node(a.shape(), "mul", {a.node(), b.node()});
    const int64_t n = out->numel();
    const real* pa = a.node()->data.data();
    const real* pb = b.node()->data.data();
    real* po = out->data.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    out->backward_fn = [n](TensorNode& self) {
        const real* g = self.gpass.data();
        const real* da = self.parents[0]->data.data();
        const real* db = self.parents[1]->data.data();
        if (real* ga = pass_buf(self.parents[0])) {
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * db[i];
        }
        if (real* gb = pass_buf(self.parents[1])) {
            for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * da[i];
        }
    };
    return Tensor(out);
}

Tensor scale(const Tensor& a, real factor) {
    require_defined(a, "scale");
    NodePtr out = op_node(a.shape(), "scale", {a.node()});
    const int64_t n = out->numel();
    const real* pa = a.node()->data.data();
    real* po = out->data.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * factor;
    out->backward_fn = [n, factor](TensorNode& self) {
        if (real* ga = pass_buf(self.parents[0])) {
            const real* g = self.gpass.data();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
        }
    };
    return Tensor(out);
}

Tensor relu(const Tensor& a) {
    require_defined(a, "relu");
    NodePtr out = op_node(a.shape(), "relu", {a.node()});
    const int64_t n = out->numel();
    const real* pa = a.node()->data.data();
    real* po = out->data.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > real(0) ? pa[i] : real(0);
    out->backward_fn = [n](TensorNode& self) {
        if (real* ga = pass_buf(self.parents[0])) {
            const real* g = self.gpass.data();
            const real* x = self.parents[0]->data.data();
            for (int64_t i = 0; i < n; ++i) {
                if (x[i] > real(0)) ga[i] += g[i];
            }
        }
    };
    return Tensor(out);
}

Tensor dropout(const Tensor& a, double rate, uint64_t seed) {
    require_defined(a, "dropout");
    if (rate < 0.0 || rate >= 1.0) {
        fail(Status::InvalidArgument, "dropout: rate must be in [0,1), got " + std::to_string(rate));
    }
    NodePtr out = op_node(a.shape(), "dropout", {a.node()});
    const int64_t n = out->numel();
    const real* pa = a.node()->data.data();
    real* po = out->data.data();
    if (rate == 0.0) {
        std::copy(pa, pa + n, po);
        out->backward_fn = [n](TensorNode& self) {
            if (real* ga = pass_buf(self.parents[0])) {
                const real* g = self.gpass.data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
        };
        return Tensor(out);
    }
    SplitMix64 rng(mix_seed(seed, 0xd7091));
    const real inv_keep = real(1.0 / (1.0 - rate));
    const bool recording = out->requires_grad;
    auto keep = std::make_shared<std::vector<uint8_t>>();
    if (recording) keep->resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const bool k = rng.uniform() >= rate;
        if (recording) (*keep)[i] = k;
        po[i] = k ? pa[i] * inv_keep : real(0);
    }
    if (recording) {
        out->backward_fn = [n, keep, inv_keep](TensorNode& self) {
            if (real* ga = pass_buf(self.parents[0])) {
                const real* g = self.gpass.data();
                for (int64_t i = 0; i < n; ++i) {
                    if ((*keep)[i]) ga[i] += g[i] * inv_keep;
                }
            }
        };
    }
    return Tensor(out);
}

// ----------------------------- matmul family -----------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        fail(Status::InvalidArgument, "matmul: incompatible shapes " + shape_str(a.shape()) +
                                          " vs " + shape_str(b.shape()));
    }
    const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    NodePtr out = op_node({m, n}, "matmul", {a.node(), b.node()});
    gemm(false, false, m, n, k, a.node()->data.data(), k, b.node()->data.data(), n,
         real(0), out->data.data(), n);
    out->backward_fn = [m, n, k](TensorNode& self) {
        const real* g = self.gpass.data();
        const real* da = self.parents[0]->data.data();
        const real* db = self.parents[1]->data.data();
        if (real* ga = pass_buf(self.parents[0])) {
            // dA += G * B^T
            gemm(false, true, m, k, n, g, n, db, n, real(1), ga, k);
        }
        if (real* gb = pass_buf(self.parents[1])) {
            // dB += A^T * G
            gemm(true, false, k, n, m, da, k, g, n, real(1), gb, n);
        }
    };
    return Tensor(out);
}

static void check_bmm(const Tensor& a, const Tensor& b, bool nt, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool ok = sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] &&
                    (nt ? sa[2] == sb[2] : sa[2] == sb[1]);
    if (!ok) {
        fail(Status::InvalidArgument, std::string(op) + ": incompatible shapes " +
                                          shape_str(sa) + " vs " + shape_str(sb));
    }
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_defined(a, "bmm");
    require_defined(b, "bmm");
    check_bmm(a, b, false, "bmm");
    const int64_t nb = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
    NodePtr out = op_node({nb, m, n}, "bmm", {a.node(), b.node()});
    const real* pa = a.node()->data.data();
    const real* pb = b.node()->data.data();
    real* po = out->data.data();
    for (int64_t i = 0; i < nb; ++i) {
        gemm(false, false, m, n, k, pa + i * m * k, k, pb + i * k * n, n, real(0),
             po + i * m * n, n);
    }
    out->backward_fn = [nb, m, n, k](TensorNode& self) {
        const real* g = self.gpass.data();
        const real* da = self.parents[0]->data.data();
        const real* db = self.parents[1]->data.data();
        real* ga = pass_buf(self.parents[0]);
        real* gb = pass_buf(self.parents[1]);
        for (int64_t i = 0; i < nb; ++i) {
            const real* gi = g + i * m * n;
            if (ga) gemm(false, true, m, k, n, gi, n, db + i * k * n, n, real(1), ga + i * m * k, k);
            if (gb) gemm(true, false, k, n, m, da + i * m * k, k, gi, n, real(1), gb + i * k * n, n);
        }
    };
    return Tensor(out);
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    require_defined(a, "bmm_nt");
    require_defined(b, "bmm_nt");
    check_bmm(a, b, true, "bmm_nt");
    const int64_t nb = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[1];
    NodePtr out = op_node({nb, m, n}, "bmm_nt", {a.node(), b.node()});
    const real* pa = a.node()->data.data();
    const real* pb = b.node()->data.data();
    real* po = out->data.data();
    for (int64_t i = 0; i < nb; ++i) {
        gemm(false, true, m, n, k, pa + i * m * k, k, pb + i * n * k, k, real(0),
             po + i * m * n, n);
    }
    out->backward_fn = [nb, m, n, k](TensorNode& self) {
        const real* g = self.gpass.data();
        const real* da = self.parents[0]->data.data();
        const real* db = self.parents[1]->data.data();
        real* ga = pass_buf(self.parents[0]);
        real* gb = pass_buf(self.parents[1]);
        for (int64_t i = 0; i < nb; ++i) {
            const real* gi = g + i * m * n;
            // out = A * B^T  =>  dA += G * B, dB += G^T * A
            if (ga) gemm(false, false, m, k, n, gi, n, db + i * n * k, k, real(1), ga + i * m * k, k);
            if (gb) gemm(true, false, n, k, m, gi, n, da + i * m * k, k, real(1), gb + i * n * k, k);
        }
    };
    return Tensor(out);
}

// ----------------------------- gather -----------------------------

Tensor embedding(const Tensor& table, std::span<const int32_t> ids, const Shape& ids_shape) {
    require_defined(table, "embedding");
    if (table.shape().size() != 2) {
        fail(Status::InvalidArgument,
             "embedding: table must be 2-D, got " + shape_str(table.shape()));
    }
    if (shape_numel(ids_shape) != static_cast<int64_t>(ids.size())) {
        fail(Status::InvalidArgument, "embedding: ids_shape " + shape_str(ids_shape) +
                                          " does not match " + std::to_string(ids.size()) +
                                          " indices");
    }
    const int64_t v = table.shape()[0], c = table.shape()[1];
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v) {
            fail(Status::InvalidArgument, "embedding: index " + std::to_string(ids[i]) +
                                              " at position " + std::to_string(i) +
                                              " outside table of " + std::to_string(v) + " rows");
        }
    }
    Shape out_shape = ids_shape;
    out_shape.push_back(c);
    NodePtr out = op_node(std::move(out_shape), "embedding", {table.node()});
    const real* pt = table.node()->data.data();
    real* po = out->data.data();
    for (size_t i = 0; i < ids.size(); ++i) {
        std::memcpy(po + i * c, pt + static_cast<int64_t>(ids[i]) * c, sizeof(real) * c);
    }
    if (out->requires_grad) {
        auto idx = std::make_shared<std::vector<int32_t>>(ids.begin(), ids.end());
        out->backward_fn = [idx, c](TensorNode& self) {
            if (real* gt = pass_buf(self.parents[0])) {
                const real* g = self.gpass.data();
                for (size_t i = 0; i < idx->size(); ++i) {
                    real* row = gt + static_cast<int64_t>((*idx)[i]) * c;
                    const real* gi = g + i * c;
                    for (int64_t j = 0; j < c; ++j) row[j] += gi[j];
                }
            }
        };
    }
    return Tensor(out);
}

// ----------------------------- layer norm -----------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
    require_defined(x, "layer_norm");
    require_defined(gain, "layer_norm");
    require_defined(bias, "layer_norm");
    if (x.shape().empty() || x.shape().back() == 0) {
        fail(Status::InvalidArgument,
             "layer_norm: last dimension of " + shape_str(x.shape()) + " must be non-zero");
    }
    const int64_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        fail(Status::InvalidArgument, "layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                                          shape_str(bias.shape()) + " must have " +
                                          std::to_string(d) + " entries");
    }
    NodePtr out = op_node(x.shape(), "layer_norm", {x.node(), gain.node(), bias.node()});
    const int64_t rows = out->numel() / d;
    const bool recording = out->requires_grad;
    auto xhat = std::make_shared<std::vector<real>>();
    auto inv_std = std::make_shared<std::vector<real>>();
    if (recording) {
        xhat->resize(static_cast<size_t>(rows * d));
        inv_std->resize(static_cast<size_t>(rows));
    }
    const real* px = x.node()->data.data();
    const real* pg = gain.node()->data.data();
    const real* pb = bias.node()->data.data();
    real* po = out->data.data();
    for (int64_t r = 0; r < rows; ++r) {
        const real* row = px + r * d;
        real m = 0;
        for (int64_t j = 0; j < d; ++j) m += row[j];
        m /= real(d);
        real var = 0;
        for (int64_t j = 0; j < d; ++j) {
            const real diff = row[j] - m;
            var += diff * diff;
        }
        var /= real(d);
        const real inv = real(1) / std::sqrt(var + eps);
        real* orow = po + r * d;
        if (recording) {
            (*inv_std)[r] = inv;
            real* xh = xhat->data() + r * d;
            for (int64_t j = 0; j < d; ++j) {
                xh[j] = (row[j] - m) * inv;
                orow[j] = xh[j] * pg[j] + pb[j];
            }
        } else {
            for (int64_t j = 0; j < d; ++j) {
                orow[j] = (row[j] - m) * inv * pg[j] + pb[j];
            }
        }
    }
    if (!recording) return Tensor(out);
    out->backward_fn = [rows, d, xhat, inv_std](TensorNode& self) {
        const real* g = self.gpass.data();
        const real* pg = self.parents[1]->data.data();
        real* gx = pass_buf(self.parents[0]);
        real* gg = pass_buf(self.parents[1]);
        real* gb = pass_buf(self.parents[2]);
        for (int64_t r = 0; r < rows; ++r) {
            const real* grow = g + r * d;
            const real* xh = xhat->data() + r * d;
            if (gg || gb) {
                for (int64_t j = 0; j < d; ++j) {
                    if (gg) gg[j] += grow[j] * xh[j];
                    if (gb) gb[j] += grow[j];
                }
            }
            if (gx) {
                real mean_dxh = 0, mean_dxh_xh = 0;
                for (int64_t j = 0; j < d; ++j) {
                    const real dxh = grow[j] * pg[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh[j];
                }
                mean_dxh /= real(d);
                mean_dxh_xh /= real(d);
                real* gxr = gx + r * d;
                const real inv = (*inv_std)[r];
                for (int64_t j = 0; j < d; ++j) {
                    const real dxh = grow[j] * pg[j];
                    gxr[j] += inv * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                }
            }
        }
    };
    return Tensor(out);
}

// ----------------------------- softmax -----------------------------

Tensor softmax(const Tensor& x) {
    require_defined(x, "softmax");
    if (x.shape().empty() || x.shape().back() == 0) {
        fail(Status::InvalidArgument,
             "softmax: last dimension of " + shape_str(x.shape()) + " must be non-zero");
    }
    const int64_t d = x.shape().back();
    NodePtr out = op_node(x.shape(), "softmax", {x.node()});
    const int64_t rows = out->numel() / d;
    const real* px = x.node()->data.data();
    real* po = out->data.data();
    for (int64_t r = 0; r < rows; ++r) {
        const real* row = px + r * d;
        real* orow = po + r * d;
        real mx = -std::numeric_limits<real>::infinity();
        for (int64_t j = 0; j < d; ++j) mx = std::max(mx, row[j]);
        real sum = 0;
        for (int64_t j = 0; j < d; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        const real inv = real(1) / sum;
        for (int64_t j = 0; j < d; ++j) orow[j] *= inv;
    }
    out->backward_fn = [rows, d](TensorNode& self) {
        if (real* gx = pass_buf(self.parents[0])) {
            const real* g = self.gpass.data();
            const real* y = self.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                const real* grow = g + r * d;
                const real* yrow = y + r * d;
                real dot = 0;
                for (int64_t j = 0; j < d; ++j) dot += grow[j] * yrow[j];
                real* gxr = gx + r * d;
                for (int64_t j = 0; j < d; ++j) gxr[j] += yrow[j] * (grow[j] - dot);
            }
        }
    };
    return Tensor(out);
}

Tensor causal_mask(const Tensor& scores) {
    require_defined(scores, "causal_mask");
    const Shape& s = scores.shape();
    if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) {
        fail(Status::InvalidArgument,
             "causal_mask: trailing axes of " + shape_str(s) + " must be square");
    }
    const int64_t t = s.back();
    NodePtr out = op_node(s, "causal_mask", {scores.node()});
    const int64_t mats = out->numel() / (t * t);
    const real* px = scores.node()->data.data();
    real* po = out->data.data();
    const real neg_inf = -std::numeric_limits<real>::infinity();
    for (int64_t mi = 0; mi < mats; ++mi) {
        for (int64_t i = 0; i < t; ++i) {
            const real* row = px + (mi * t + i) * t;
            real* orow = po + (mi * t + i) * t;
            for (int64_t j = 0; j <= i; ++j) orow[j] = row[j];
            for (int64_t j = i + 1; j < t; ++j) orow[j] = neg_inf;
        }
    }
    out->backward_fn = [mats, t](TensorNode& self) {
        if (real* gx = pass_buf(self.parents[0])) {
            const real* g = self.gpass.data();
            for (int64_t mi = 0; mi < mats; ++mi) {
                for (int64_t i = 0; i < t; ++i) {
                    const int64_t base = (mi * t + i) * t;
                    for (int64_t j = 0; j <= i; ++j) gx[base + j] += g[base + j];
                }
            }
        }
    };
    return Tensor(out);
}

Tensor causal_softmax(const Tensor& scores) {
    require_defined(scores, "causal_softmax");
    const Shape& s = scores.shape();
    if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) {
        fail(Status::InvalidArgument,
             "causal_softmax: trailing axes of " + shape_str(s) + " must be square");
    }
    const int64_t t = s.back();
    NodePtr out = op_node(s, "causal_softmax", {scores.node()});
    const int64_t mats = out->numel() / (t * t);
    const real* px = scores.node()->data.data();
    real* po = out->data.data();
    for (int64_t mi = 0; mi < mats; ++mi) {
        for (int64_t i = 0; i < t; ++i) {
            const real* row = px + (mi * t + i) * t;
            real* orow = po + (mi * t + i) * t;
            real mx = row[0];
            for (int64_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
            real sum = 0;
            for (int64_t j = 0; j <= i; ++j) {
                orow[j] = std::exp(row[j] - mx);
                sum += orow[j];
            }
            const real inv = real(1) / sum;
            for (int64_t j = 0; j <= i; ++j) orow[j] *= inv;
            for (int64_t j = i + 1; j < t; ++j) orow[j] = real(0);
        }
    }
    if (out->requires_grad) {
        out->backward_fn = [mats, t](TensorNode& self) {
            if (real* gx = pass_buf(self.parents[0])) {
                const real* g = self.gpass.data();
                const real* y = self.data.data();
                for (int64_t mi = 0; mi < mats; ++mi) {
                    for (int64_t i = 0; i < t; ++i) {
                        const int64_t base = (mi * t + i) * t;
                        real dot = 0;
                        for (int64_t j = 0; j <= i; ++j) dot += g[base + j] * y[base + j];
                        for (int64_t j = 0; j <= i; ++j) {
                            gx[base + j] += y[base + j] * (g[base + j] - dot);
                        }
                    }
                }
            }
        };
    }
    return Tensor(out);
}

// ----------------------------- layout -----------------------------

Tensor reshape(const Tensor& a, const Shape& new_shape) {
    require_defined(a, "reshape");
    if (shape_numel(new_shape) != a.numel()) {
        fail(Status::InvalidArgument, "reshape: cannot view " + shape_str(a.shape()) + " as " +
                                          shape_str(new_shape));
    }
    NodePtr out = op_node(new_shape, "reshape", {a.node()});
    out->data = a.node()->data;
    const int64_t n = out->numel();
    out->backward_fn = [n](TensorNode& self) {
        if (real* ga = pass_buf(self.parents[0])) {
            const real* g = self.gpass.data();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
    };
    return Tensor(out);
}

// Strides of a dense row-major layout.
static std::array<int64_t, 4> strides4(const Shape& s) {
    std::array<int64_t, 4> dims{1, 1, 1, 1};
    const size_t off = 4 - s.size();
    for (size_t i = 0; i < s.size(); ++i) dims[off + i] = s[i];
    std::array<int64_t, 4> st{};
    st[3] = 1;
    for (int i = 2; i >= 0; --i) st[i] = st[i + 1] * dims[i + 1];
    return st;
}

static void permute_copy(const Shape& in_shape, const std::vector<int>& perm, const real* in,
                         real* out, bool accumulate) {
    const size_t rank = in_shape.size();
    Shape out_shape(rank);
    for (size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
    const auto ist = strides4(in_shape);
    const size_t off = 4 - rank;
    // output strides mapped back to input axes
    std::array<int64_t, 4> map_st{0, 0, 0, 0};
    {
        const auto ost = strides4(out_shape);
        for (size_t i = 0; i < rank; ++i) map_st[off + perm[i]] = ost[off + i];
    }
    std::array<int64_t, 4> dims{1, 1, 1, 1};
    for (size_t i = 0; i < rank; ++i) dims[off + i] = in_shape[i];
    for (int64_t i0 = 0; i0 < dims[0]; ++i0)
        for (int64_t i1 = 0; i1 < dims[1]; ++i1)
            for (int64_t i2 = 0; i2 < dims[2]; ++i2) {
                const real* src = in + i0 * ist[0] + i1 * ist[1] + i2 * ist[2];
                const int64_t obase = i0 * map_st[0] + i1 * map_st[1] + i2 * map_st[2];
                if (accumulate) {
                    for (int64_t i3 = 0; i3 < dims[3]; ++i3) out[obase + i3 * map_st[3]] += src[i3];
                } else {
                    for (int64_t i3 = 0; i3 < dims[3]; ++i3) out[obase + i3 * map_st[3]] = src[i3];
                }
            }
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
    require_defined(a, "permute");
    const size_t rank = a.shape().size();
    if (rank > 4 || perm.size() != rank) {
        fail(Status::InvalidArgument,
             "permute: want a permutation of " + std::to_string(rank) + " axes (rank <= 4)");
    }
    std::vector<bool> seen(rank, false);
    for (int p : perm) {
        if (p < 0 || static_cast<size_t>(p) >= rank || seen[p]) {
            fail(Status::InvalidArgument, "permute: invalid axis order");
        }
        seen[p] = true;
    }
    Shape out_shape(rank);
    for (size_t i = 0; i < rank; ++i) out_shape[i] = a.shape()[perm[i]];
    NodePtr out = op_node(out_shape, "permute", {a.node()});
    permute_copy(a.shape(), perm, a.node()->data.data(), out->data.data(), false);
    std::vector<int> inverse(rank);
    for (size_t i = 0; i < rank; ++i) inverse[perm[i]] = static_cast<int>(i);
    out->backward_fn = [out_shape, inverse](TensorNode& self) {
        if (real* ga = pass_buf(self.parents[0])) {
            // the gradient lives in the permuted layout; the inverse
            // permutation scatters it back onto the input layout
            permute_copy(out_shape, inverse, self.gpass.data(), ga, true);
        }
    };
    return Tensor(out);
}

// ----------------------------- reductions -----------------------------

Tensor sum(const Tensor& a) {
    require_defined(a, "sum");
    NodePtr out = op_node({1}, "sum", {a.node()});
    const int64_t n = a.numel();
    const real* pa = a.node()->data.data();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    out->data[0] = static_cast<real>(acc);
    out->backward_fn = [n](TensorNode& self) {
        if (real* ga = pass_buf(self.parents[0])) {
            const real g = self.gpass[0];
            for (int64_t i = 0; i < n; ++i) ga[i] += g;
        }
    };
    return Tensor(out);
}

Tensor mean(const Tensor& a) {
    require_defined(a, "mean");
    NodePtr out = op_node({1}, "mean", {a.node()});
    const int64_t n = a.numel();
    const real* pa = a.node()->data.data();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    out->data[0] = static_cast<real>(acc / static_cast<double>(n));
    out->backward_fn = [n](TensorNode& self) {
        if (real* ga = pass_buf(self.parents[0])) {
            const real g = self.gpass[0] / real(n);
            for (int64_t i = 0; i < n; ++i) ga[i] += g;
        }
    };
    return Tensor(out);
}

// ----------------------------- cross entropy -----------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const int32_t> targets) {
    require_defined(logits, "cross_entropy");
    if (logits.shape().size() != 2) {
        fail(Status::InvalidArgument,
             "cross_entropy: logits must be 2-D, got " + shape_str(logits.shape()));
    }
    const int64_t n = logits.shape()[0], v = logits.shape()[1];
    if (static_cast<int64_t>(targets.size()) != n) {
        fail(Status::InvalidArgument, "cross_entropy: " + std::to_string(n) + " rows vs " +
                                          std::to_string(targets.size()) + " targets");
    }
    for (int64_t i = 0; i < n; ++i) {
        if (targets[i] < 0 || targets[i] >= v) {
            fail(Status::InvalidArgument, "cross_entropy: target " + std::to_string(targets[i]) +
                                              " at row " + std::to_string(i) +
                                              " outside [0, " + std::to_string(v) + ")");
        }
    }
    NodePtr out = op_node({1}, "cross_entropy", {logits.node()});
    const bool recording = out->requires_grad;
    auto probs = std::make_shared<std::vector<real>>();
    if (recording) probs->resize(static_cast<size_t>(n * v));
    const real* px = logits.node()->data.data();
    double loss_sum = 0;
    for (int64_t r = 0; r < n; ++r) {
        const real* row = px + r * v;
        real mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        real sum = 0;
        if (recording) {
            real* prow = probs->data() + r * v;
            for (int64_t j = 0; j < v; ++j) {
                prow[j] = std::exp(row[j] - mx);
                sum += prow[j];
            }
            const real inv = real(1) / sum;
            for (int64_t j = 0; j < v; ++j) prow[j] *= inv;
        } else {
            for (int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        }
        loss_sum += -(static_cast<double>(row[targets[r]]) - static_cast<double>(mx) -
                      std::log(static_cast<double>(sum)));
    }
    out->data[0] = static_cast<real>(loss_sum / static_cast<double>(n));
    if (recording) {
        auto tgt = std::make_shared<std::vector<int32_t>>(targets.begin(), targets.end());
        out->backward_fn = [n, v, probs, tgt](TensorNode& self) {
            if (real* gx = pass_buf(self.parents[0])) {
                const real g = self.gpass[0] / real(n);
                const real* p = probs->data();
                for (int64_t r = 0; r < n; ++r) {
                    real* grow = gx + r * v;
                    const real* prow = p + r * v;
                    for (int64_t j = 0; j < v; ++j) grow[j] += g * prow[j];
                    grow[(*tgt)[r]] -= g;
                }
            }
        };
    }
    return Tensor(out);
}

// ----------------------------- backward -----------------------------

static std::vector<TensorNode*> topo_sort(TensorNode* root) {
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    // iterative DFS, children pushed before the node is emitted
    std::vector<std::pair<TensorNode*, size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void backward(const Tensor& loss) {
    require_defined(loss, "backward");
    if (loss.numel() != 1) {
        fail(Status::InvalidArgument,
             "backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        fail(Status::State, "backward: tensor has no compute graph requiring gradients");
    }
    TensorNode* root = loss.node().get();
    std::vector<TensorNode*> order = topo_sort(root);
    root->gpass.assign(1, real(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->gpass.empty()) continue;  // no gradient reached this subgraph
        if (node->backward_fn) {
            for (const NodePtr& p : node->parents) {
                if (p->requires_grad && p->gpass.empty()) {
                    p->gpass.assign(p->data.size(), real(0));
                }
            }
            node->backward_fn(*node);
        }
        if (node->requires_grad) {
            if (node->grad.empty()) node->grad.assign(node->data.size(), real(0));
            const size_t n = node->grad.size();
            for (size_t i = 0; i < n; ++i) node->grad[i] += node->gpass[i];
        }
        node->gpass = {};
    }
}

}  // namespace traceprune
