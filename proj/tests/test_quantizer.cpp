#include "qnet/quantizer.hpp"
#include "qnet/synthetic.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <random>

using namespace qnet;

TEST_CASE("uniform quantization of evenly spaced signed values is exact") {
    std::vector<float> vals;
    for (int v = -7; v <= 7; ++v) vals.push_back(static_cast<float>(v) / 7.0f);
    Tensor t({vals.size()}, vals);
    QuantResult r = uniform_quantize(t, QuantScheme::signed_bits(4));
    CHECK(r.quantized.alpha == doctest::Approx(1.0 / 7.0));
    CHECK(r.mse == 0.0);
}

TEST_CASE("uniform offset scheme covers [0, 15] exactly") {
    Tensor t({2}, {0.0f, 15.0f});
    QuantResult r = uniform_quantize(t, QuantScheme::unsigned_offset(4));
    CHECK(r.quantized.delta == doctest::Approx(0.0));
    CHECK(r.quantized.alpha == doctest::Approx(1.0));
    CHECK(r.mse == 0.0);
}

TEST_CASE("uniform no-offset hand example") {
    Tensor t({2}, {-1.0f, 0.5f});
    QuantResult r = uniform_quantize(t, QuantScheme::signed_bits(4));
    CHECK(r.quantized.alpha == doctest::Approx(1.0 / 7.0));
    CHECK(r.quantized.values[0] == -7);
    CHECK(r.quantized.values[1] == 4);   // 0.5*7 = 3.5 rounds away from zero
}

TEST_CASE("all-zero tensor quantizes to the degenerate convention") {
    Tensor t({4});
    for (QuantMethod m : {QuantMethod::uniform, QuantMethod::omse, QuantMethod::golden,
                          QuantMethod::alternating}) {
        QuantResult r = quantize_with(m, t, QuantScheme::signed_bits(4), 100);
        CHECK(r.degenerate);
        CHECK(r.quantized.alpha == 1.0);
        CHECK(r.mse == 0.0);
        for (auto v : r.quantized.values) CHECK(v == 0);
    }
}

TEST_CASE("stored quantizer mse recomputes through dequantize") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 40; ++rep) {
        Tensor t = random_mixed_tensor({3, 3, 4}, rng);
        QuantScheme s = rep % 2 ? QuantScheme::signed_bits(4) : QuantScheme::unsigned_offset(4);
        if (!s.offset_enabled)
            for (int m = 0; m < 4; ++m) {
                QuantResult r = quantize_with(static_cast<QuantMethod>(m), t, s, 200);
                double recomputed = mse(t, dequantize(r.quantized));
                CHECK(oracle::rel_err(r.mse, recomputed) < 1e-9);
            }
        else {
            QuantResult r = omse_grid_search(t, s, 200);
            CHECK(oracle::rel_err(r.mse, mse(t, dequantize(r.quantized))) < 1e-9);
        }
    }
}

TEST_CASE("omse never loses to uniform (grid contains alpha_max)") {
    std::mt19937_64 rng(22);
    for (int rep = 0; rep < 200; ++rep) {
        Tensor t = random_mixed_tensor({2 + static_cast<std::size_t>(rep % 4), 3, 3}, rng);
        QuantResult u = uniform_quantize(t, QuantScheme::signed_bits(4));
        QuantResult o = omse_grid_search(t, QuantScheme::signed_bits(4), 500);
        CHECK(o.mse <= u.mse);
    }
}

TEST_CASE("omse matches a dense scan within 1% relative") {
    std::mt19937_64 rng(23);
    // Dense-scan oracle: frozen tolerance from the derivation harness.
    for (int rep = 0; rep < 10; ++rep) {
        Tensor t = random_mixed_tensor({4, 4, 3}, rng);
        QuantResult o = omse_grid_search(t, QuantScheme::signed_bits(4), 500);
        oracle::ScanResult dense = oracle::dense_scan(t, QuantScheme::signed_bits(4), 50000);
        CHECK(o.mse <= dense.mse * 1.01 + 1e-15);
    }
}

TEST_CASE("omse is exact when the representing alpha lies on the grid") {
    std::mt19937_64 rng(24);
    std::uniform_int_distribution<int> vals(-7, 7);
    std::uniform_int_distribution<int> dyadic(1, 64);
    for (int rep = 0; rep < 20; ++rep) {
        // Dyadic alpha * integers with the full range hit: the products are
        // exact floats and alpha_max == alpha is the last grid point, so the
        // search must find the exact reconstruction.
        double alpha = dyadic(rng) / 32.0;
        Tensor base({8});
        for (std::size_t i = 0; i < base.numel(); ++i)
            base[i] = static_cast<float>(alpha * vals(rng));
        base[0] = static_cast<float>(alpha * 7);
        QuantResult q = omse_grid_search(base, QuantScheme::signed_bits(4), 500);
        CHECK(q.mse == 0.0);
    }
}

TEST_CASE("omse scale equivariance under power-of-two scaling") {
    std::mt19937_64 rng(25);
    for (int rep = 0; rep < 25; ++rep) {
        Tensor t = random_mixed_tensor({3, 3, 3}, rng);
        for (double c : {0.5, 2.0, 4.0, 0.25}) {
            Tensor ct(t.shape());
            for (std::size_t i = 0; i < t.numel(); ++i)
                ct[i] = static_cast<float>(c * static_cast<double>(t[i]));
            QuantResult a = omse_grid_search(t, QuantScheme::signed_bits(4), 100);
            QuantResult b = omse_grid_search(ct, QuantScheme::signed_bits(4), 100);
            CHECK(b.quantized.alpha == doctest::Approx(c * a.quantized.alpha).epsilon(1e-12));
            CHECK(a.quantized.values == b.quantized.values);
        }
    }
}

TEST_CASE("omse alpha acts as the saturation threshold") {
    std::mt19937_64 rng(26);
    for (int rep = 0; rep < 30; ++rep) {
        Tensor t = random_mixed_tensor({40}, rng);
        QuantScheme s = QuantScheme::signed_bits(4);
        QuantResult r = omse_grid_search(t, s, 300);
        auto [lo, hi] = quant_range(s);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (static_cast<double>(t[i]) > r.quantized.alpha * hi)
                CHECK(r.quantized.values[i] == hi);
            if (static_cast<double>(t[i]) < r.quantized.alpha * lo)
                CHECK(r.quantized.values[i] == lo);
        }
    }
}

TEST_CASE("omse rejects bad grids and unsigned misuse") {
    Tensor t({2}, {1.0f, 2.0f});
    CHECK_THROWS_AS(omse_grid_search(t, QuantScheme::signed_bits(4), 1), ValidationError);
    Tensor neg({2}, {-1.0f, 2.0f});
    QuantScheme unsigned_plain{4, false, false};
    CHECK_THROWS_AS(omse_grid_search(neg, unsigned_plain, 10), ValidationError);
    // Non-negative input is fine without an offset.
    Tensor pos({2}, {1.0f, 2.0f});
    CHECK(omse_grid_search(pos, unsigned_plain, 100).mse >= 0.0);
}

TEST_CASE("golden section stays close to the dense optimum on a clean landscape") {
    // Two distinct magnitudes give a monotone-enough objective around the
    // optimum; golden should land within tolerance of the dense scan.
    Tensor t({4}, {1.0f, 1.0f, -1.0f, 0.125f});
    QuantResult g = golden_section_quantize(t, QuantScheme::signed_bits(4), 1e-4);
    oracle::ScanResult dense = oracle::dense_scan(t, QuantScheme::signed_bits(4), 20000);
    CHECK(g.mse <= dense.mse * 1.05 + 1e-12);
}

TEST_CASE("golden section exact input") {
    std::vector<float> vals;
    for (int v = -7; v <= 7; ++v) vals.push_back(static_cast<float>(v) / 7.0f);
    Tensor t({vals.size()}, vals);
    QuantResult g = golden_section_quantize(t, QuantScheme::signed_bits(4), 1e-6);
    CHECK(g.mse == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("alternating objective is non-increasing across iterations") {
    std::mt19937_64 rng(27);
    for (int rep = 0; rep < 30; ++rep) {
        Tensor t = random_mixed_tensor({3, 3, 2}, rng);
        double prev = std::numeric_limits<double>::infinity();
        for (int iters = 1; iters <= 6; ++iters) {
            QuantResult r = alternating_quantize(t, QuantScheme::signed_bits(4), iters);
            CHECK(r.mse <= prev * (1.0 + 1e-12) + 1e-18);
            prev = r.mse;
        }
    }
}

TEST_CASE("alternating converges immediately on exactly representable input") {
    std::vector<float> vals;
    for (int v = -7; v <= 7; ++v) vals.push_back(static_cast<float>(v) / 7.0f);
    Tensor t({vals.size()}, vals);
    QuantResult r = alternating_quantize(t, QuantScheme::signed_bits(4), 50);
    CHECK(r.mse == doctest::Approx(0.0));
    CHECK(r.iterations <= 2);
}

TEST_CASE("method comparison averages order as expected") {
    std::mt19937_64 rng(28);
    double sum_omse = 0, sum_gold = 0, sum_alt = 0, sum_uni = 0;
    const int n = 120;
    for (int rep = 0; rep < n; ++rep) {
        Tensor t = random_mixed_tensor({3, 3, 16}, rng);
        QuantScheme s = QuantScheme::signed_bits(4);
        sum_uni += uniform_quantize(t, s).mse;
        sum_omse += omse_grid_search(t, s, 500).mse;
        sum_gold += golden_section_quantize(t, s).mse;
        sum_alt += alternating_quantize(t, s).mse;
    }
    CHECK(sum_omse <= sum_gold);
    CHECK(sum_omse <= sum_alt);
    CHECK(sum_omse <= sum_uni);
}
