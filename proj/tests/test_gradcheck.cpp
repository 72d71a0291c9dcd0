// Central finite-difference checks for every differentiable primitive, on
// randomized small instances. The numeric side re-runs only the forward
// computation, so it is independent of the backward implementation.
//
// Built twice: once against the shipped f32 engine (tolerance 1e-2) and once
// with TRACEPRUNE_REAL_DOUBLE (tolerance 1e-5).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tensor.hpp"
#include "testutil.hpp"

using namespace traceprune;
using tptest::max_grad_error;
using tptest::random_tensor;

namespace {
constexpr int kInstances = 5;
}

// Each case runs >= kInstances random instances of one primitive.

TEST_CASE("grad: matmul") {
    SplitMix64 rng(101);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)};
        auto loss = [&] { return sum(matmul(leaves[0], leaves[1])); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: bmm and bmm_nt") {
    SplitMix64 rng(102);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({2, 3, 4}, rng),
                                      random_tensor({2, 4, 3}, rng)};
        auto loss = [&] { return sum(bmm(leaves[0], leaves[1])); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());

        std::vector<Tensor> leaves2 = {random_tensor({2, 3, 4}, rng),
                                       random_tensor({2, 5, 4}, rng)};
        auto loss2 = [&] { return sum(bmm_nt(leaves2[0], leaves2[1])); };
        CHECK(max_grad_error(leaves2, loss2) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: elementwise add with broadcast") {
    SplitMix64 rng(103);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({4, 3}, rng), random_tensor({3}, rng)};
        auto loss = [&] { return sum(mul(add(leaves[0], leaves[1]), add(leaves[0], leaves[1]))); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: elementwise multiply") {
    SplitMix64 rng(104);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({5, 2}, rng), random_tensor({5, 2}, rng)};
        auto loss = [&] { return sum(mul(leaves[0], leaves[1])); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: scalar scaling") {
    SplitMix64 rng(105);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({6}, rng)};
        const real factor = real(0.125);  // the attention-score style constant
        auto loss = [&] { return sum(mul(scale(leaves[0], factor), leaves[0])); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: relu away from the kink") {
    SplitMix64 rng(106);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({8}, rng)};
        // keep every coordinate a safe distance from zero so the central
        // difference never straddles the kink
        for (real& v : leaves[0].data()) v += (v >= 0 ? real(0.25) : real(-0.25));
        auto loss = [&] { return sum(mul(relu(leaves[0]), relu(leaves[0]))); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: dropout with a fixed mask") {
    SplitMix64 rng(107);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({10}, rng)};
        const uint64_t seed = 500 + it;
        auto loss = [&] { return sum(mul(dropout(leaves[0], 0.3, seed), leaves[0])); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: embedding lookup") {
    SplitMix64 rng(108);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({5, 3}, rng)};
        std::vector<int32_t> ids = {0, 4, 2, 4};
        auto loss = [&] {
            Tensor e = embedding(leaves[0], ids, {4});
            return sum(mul(e, e));
        };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: layer norm in x, gain and bias") {
    SplitMix64 rng(109);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({3, 6}, rng), random_tensor({6}, rng),
                                      random_tensor({6}, rng)};
        auto loss = [&] {
            Tensor y = layer_norm(leaves[0], leaves[1], leaves[2], real(1e-5));
            return sum(mul(y, y));
        };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: softmax along the last axis") {
    SplitMix64 rng(110);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({4, 5}, rng, true, 2.0)};
        Tensor pick = random_tensor({4, 5}, rng, false);
        auto loss = [&] { return sum(mul(softmax(leaves[0]), pick)); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: causal mask plus softmax") {
    SplitMix64 rng(111);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({2, 4, 4}, rng, true, 2.0)};
        Tensor pick = random_tensor({2, 4, 4}, rng, false);
        auto loss = [&] { return sum(mul(softmax(causal_mask(leaves[0])), pick)); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: fused causal softmax") {
    SplitMix64 rng(116);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({2, 4, 4}, rng, true, 2.0)};
        Tensor pick = random_tensor({2, 4, 4}, rng, false);
        auto loss = [&] { return sum(mul(causal_softmax(leaves[0]), pick)); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: reshape and permute") {
    SplitMix64 rng(112);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({2, 3, 2, 2}, rng)};
        Tensor pick = random_tensor({3, 2, 2, 2}, rng, false);
        auto loss = [&] {
            Tensor p = permute(leaves[0], {1, 0, 3, 2});
            return sum(mul(reshape(p, {3, 2, 2, 2}), pick));
        };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: softmax cross entropy matches finite differences") {
    SplitMix64 rng(113);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({4, 10}, rng, true, 2.0)};
        std::vector<int32_t> targets(4);
        for (auto& t : targets) t = static_cast<int32_t>(rng.below(10));
        auto loss = [&] { return cross_entropy(leaves[0], targets); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: mean reduction") {
    SplitMix64 rng(114);
    for (int it = 0; it < kInstances; ++it) {
        std::vector<Tensor> leaves = {random_tensor({7}, rng)};
        auto loss = [&] { return mean(mul(leaves[0], leaves[0])); };
        CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
    }
}

TEST_CASE("grad: a transformer-shaped composite") {
    SplitMix64 rng(115);
    std::vector<Tensor> leaves = {random_tensor({6, 4}, rng, true, 0.5),   // x
                                  random_tensor({4, 4}, rng, true, 0.5),   // w
                                  random_tensor({4}, rng, true, 0.5),      // gain
                                  random_tensor({4}, rng, true, 0.5)};     // bias
    std::vector<int32_t> targets = {1, 3, 0, 2, 1, 3};
    auto loss = [&] {
        Tensor h = matmul(leaves[0], leaves[1]);
        h = layer_norm(add(h, leaves[0]), leaves[2], leaves[3], real(1e-5));
        return cross_entropy(h, targets);
    };
    CHECK(max_grad_error(leaves, loss) < tptest::gradcheck_tol());
}
