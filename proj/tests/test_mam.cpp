#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "hear/grad_check.hpp"
#include "hear/mam.hpp"
#include "hear/pipeline.hpp"
#include "test_util.hpp"

using namespace hear;
using namespace hear::testutil;

namespace {

TokenizerConfig tiny_tokenizer(int patch_width, int vocab) {
    TokenizerConfig cfg;
    cfg.encoder = {8, 16, 2, 1, 4, patch_width};
    cfg.decoder = {8, 16, 2, 1, 4, 4};
    cfg.codebook_size = vocab;
    cfg.code_dim = 4;
    cfg.teacher_dim = 8;
    return cfg;
}

} // namespace

TEST_CASE("mask sampling") {
    SUBCASE("exact count at the 40% ratio") {
        Rng rng(1, "mask");
        const auto plan = sample_mask(100, rng);
        CHECK(plan.indices.size() == 40);
        for (size_t i = 1; i < plan.indices.size(); ++i)
            CHECK(plan.indices[i] > plan.indices[i - 1]);
        CHECK(plan.indices.back() < 100);
    }
    SUBCASE("rounding edge: a single position stays unmasked") {
        Rng rng(2, "mask");
        CHECK(sample_mask(1, rng).indices.empty());
        CHECK(sample_mask(2, rng).indices.size() == 1); // round(0.8)
    }
    SUBCASE("Monte Carlo per-position frequency is 0.40 +- 0.02") {
        const int n = 50, draws = 10000;
        std::vector<int> hits(n, 0);
        for (int d = 0; d < draws; ++d) {
            Rng rng(uint64_t(d), "mask_mc");
            for (int i : sample_mask(n, rng).indices) ++hits[size_t(i)];
        }
        for (int i = 0; i < n; ++i) {
            const double freq = double(hits[size_t(i)]) / draws;
            CHECK(freq == doctest::Approx(0.40).epsilon(0.05)); // 0.40 +- 0.02
        }
    }
    SUBCASE("independent masking: adjacency matches exact-count statistics") {
        // E[# adjacent masked pairs] = m(m-1)/N for uniform subsets; span
        // masking would exceed this by construction
        const int n = 50, m = 20, draws = 20000;
        double pairs = 0;
        for (int d = 0; d < draws; ++d) {
            Rng rng(uint64_t(d), "mask_adj");
            const auto flags = sample_mask(n, rng).flags();
            for (int i = 0; i + 1 < n; ++i) pairs += flags[size_t(i)] && flags[size_t(i) + 1];
        }
        pairs /= draws;
        CHECK(pairs == doctest::Approx(double(m) * (m - 1) / n).epsilon(0.03));
    }
    SUBCASE("bernoulli switch masks each position independently") {
        int total = 0;
        bool count_varies = false;
        int first = -1;
        for (int d = 0; d < 2000; ++d) {
            Rng rng(uint64_t(d), "mask_bern");
            const int got = static_cast<int>(sample_mask(50, rng, 0.40, true).indices.size());
            total += got;
            if (first < 0) first = got;
            count_varies = count_varies || got != first;
        }
        CHECK(count_varies); // exact-count mode would be constant
        CHECK(double(total) / (2000 * 50) == doctest::Approx(0.40).epsilon(0.05));
    }
    SUBCASE("errors") {
        Rng rng(3, "mask");
        CHECK_THROWS_AS(sample_mask(0, rng), DataError);
        CHECK_THROWS_AS(sample_mask(10, rng, 1.5), ConfigError);
    }
}

TEST_CASE("mask application zeroes exactly the planned rows") {
    const auto patches = random_matrix<float>(3, 6, 1);
    SUBCASE("empty plan is the identity") {
        MaskPlan plan;
        plan.n = 3;
        const auto out = apply_mask(patches, plan);
        CHECK(out.data == patches.data);
    }
    SUBCASE("full plan zeroes everything") {
        MaskPlan plan;
        plan.n = 3;
        plan.indices = {0, 1, 2};
        const auto out = apply_mask(patches, plan);
        for (float v : out.data) CHECK(v == 0.0f);
    }
    SUBCASE("M = {1} zeroes only the middle token") {
        MaskPlan plan;
        plan.n = 3;
        plan.indices = {1};
        const auto out = apply_mask(patches, plan);
        for (int c = 0; c < 6; ++c) {
            CHECK(out.at(0, c) == patches.at(0, c));
            CHECK(out.at(1, c) == 0.0f);
            CHECK(out.at(2, c) == patches.at(2, c));
        }
    }
    SUBCASE("out-of-range index is rejected") {
        MaskPlan plan;
        plan.n = 3;
        plan.indices = {5};
        CHECK_THROWS_AS(apply_mask(patches, plan), DataError);
    }
}

TEST_CASE("masked cross-entropy") {
    SUBCASE("uniform logits over 1024 classes give ln(1024)") {
        Tape<double> tape;
        Tensord logits({4, 1024}, 0.0);
        MaskPlan plan;
        plan.n = 4;
        plan.indices = {0, 2};
        auto l = mam_loss(tape, tape.constant(logits), {5, 9, 100, 7}, plan);
        CHECK(tape.value(l)[0] == doctest::Approx(std::log(1024.0)).epsilon(1e-9));
        CHECK(std::fabs(tape.value(l)[0] - 6.9315) < 1e-3);
    }
    SUBCASE("a huge correct margin drives the loss to zero") {
        Tape<double> tape;
        Tensord logits({2, 8}, 0.0);
        logits.at(0, 3) = 1e6;
        logits.at(1, 1) = 1e6;
        MaskPlan plan;
        plan.n = 2;
        plan.indices = {0, 1};
        auto l = mam_loss(tape, tape.constant(logits), {3, 1}, plan);
        CHECK(tape.value(l)[0] == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("two masked tokens match the hand softmax cross-entropy") {
        Tape<double> tape;
        Tensord logits({3, 3}, std::vector<double>{1.0, 2.0, 0.5, /* row 1 */ 0.0, 0.0, 0.0,
                                                   /* row 2 */ 2.0, -1.0, 0.3});
        MaskPlan plan;
        plan.n = 3;
        plan.indices = {0, 2};
        auto hand_ce = [](std::vector<double> row, int t) {
            double mx = *std::max_element(row.begin(), row.end());
            double sum = 0;
            for (double v : row) sum += std::exp(v - mx);
            return std::log(sum) + mx - row[size_t(t)];
        };
        const double expect = 0.5 * (hand_ce({1.0, 2.0, 0.5}, 1) + hand_ce({2.0, -1.0, 0.3}, 2));
        auto l = mam_loss(tape, tape.constant(logits), {1, 0, 2}, plan);
        CHECK(tape.value(l)[0] == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("an empty mask reports zero with a warning") {
        Tape<double> tape;
        Tensord logits({2, 4}, 0.3);
        MaskPlan plan;
        plan.n = 2;
        bool warned = false;
        auto l = mam_loss(tape, tape.constant(logits), {0, 1}, plan, &warned);
        CHECK(tape.value(l)[0] == 0.0);
        CHECK(warned);
    }
    SUBCASE("targets outside the mask never contribute") {
        Tape<double> tape;
        const auto logits = random_matrix<double>(5, 6, 2, 2.0);
        MaskPlan plan;
        plan.n = 5;
        plan.indices = {1, 3};
        auto a = mam_loss(tape, tape.constant(logits), {0, 2, 0, 4, 0}, plan);
        auto b = mam_loss(tape, tape.constant(logits), {5, 2, 3, 4, 1}, plan);
        CHECK(tape.value(a)[0] == tape.value(b)[0]);
    }
}

TEST_CASE("mam cross-entropy gradient passes the finite-difference oracle") {
    MaskPlan plan;
    plan.n = 4;
    plan.indices = {0, 3};
    auto build = [&](Taped& tape, const std::vector<Taped::Id>& ids) {
        return mam_loss(tape, ids[0], {2, 0, 1, 4}, plan);
    };
    const auto report = grad_check(build, {random_matrix<double>(4, 6, 3, 2.0)});
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("pretrain step") {
    const auto tok_cfg = tiny_tokenizer(16, 1024);
    auto tokenizer = TokenizerWeights<float>::random_init(tok_cfg, 60);
    const EncoderConfig acoustic{16, 32, 2, 1, 8, 16};
    const LrSchedule schedule{1e-3, 20, 5000};

    std::vector<Tensorf> segs{random_matrix<float>(20, 16, 70), random_matrix<float>(16, 16, 71)};
    std::vector<const Tensorf*> batch{&segs[0], &segs[1]};

    SUBCASE("step-0 loss sits near the maximum-entropy baseline") {
        auto weights = MamWeights<float>::random_init(acoustic, 1024, 61);
        AdamW<float> opt;
        const auto stats = pretrain_step(weights, tokenizer, batch, opt, schedule, 0, 0.4, false, 5);
        CHECK(std::fabs(stats.loss - std::log(1024.0)) < 0.5);
        CHECK(stats.tokenizer_grad_abs_sum == 0.0);
    }
    SUBCASE("tokenizer weights are bit-identical across a step (frozen contract)") {
        auto weights = MamWeights<float>::random_init(acoustic, 1024, 62);
        AdamW<float> opt;
        std::vector<float> before;
        tokenizer.for_each([&](const std::string&, Tensorf& t) {
            before.insert(before.end(), t.data.begin(), t.data.end());
        });
        for (int64_t step = 0; step < 3; ++step)
            pretrain_step(weights, tokenizer, batch, opt, schedule, step, 0.4, false, 5);
        std::vector<float> after;
        tokenizer.for_each([&](const std::string&, Tensorf& t) {
            after.insert(after.end(), t.data.begin(), t.data.end());
        });
        CHECK(before == after);
    }
    SUBCASE("same seed reproduces the loss trace bit-exactly") {
        auto w1 = MamWeights<float>::random_init(acoustic, 1024, 63);
        auto w2 = MamWeights<float>::random_init(acoustic, 1024, 63);
        AdamW<float> o1, o2;
        for (int64_t step = 0; step < 4; ++step) {
            const auto a = pretrain_step(w1, tokenizer, batch, o1, schedule, step, 0.4, false, 9);
            const auto b = pretrain_step(w2, tokenizer, batch, o2, schedule, step, 0.4, false, 9);
            CHECK(a.loss == b.loss);
            CHECK(a.masked_acc == b.masked_acc);
        }
    }
    SUBCASE("smoothed loss decreases over a short desk run") {
        auto weights = MamWeights<float>::random_init(acoustic, 1024, 64);
        AdamW<float> opt;
        double early = 0, late = 0;
        const int steps = 400;
        for (int64_t step = 0; step < steps; ++step) {
            const auto s = pretrain_step(weights, tokenizer, batch, opt, schedule, step, 0.4,
                                         false, 13);
            if (step < 50) early += s.loss;
            if (step >= steps - 50) late += s.loss;
        }
        CHECK(late / 50.0 < early / 50.0);
    }
}

TEST_CASE("masked run lengths match sampling-without-replacement statistics") {
    const int n = 50, m = 20, draws = 30000;

    // histogram of maximal masked-run lengths (lengths >= 7 pooled)
    auto run_hist = [&](const std::function<std::vector<uint8_t>(int)>& draw) {
        std::vector<double> hist(8, 0.0);
        for (int d = 0; d < draws; ++d) {
            const auto flags = draw(d);
            int len = 0;
            for (int i = 0; i <= n; ++i) {
                if (i < n && flags[size_t(i)]) {
                    ++len;
                } else if (len > 0) {
                    hist[size_t(std::min(len, 7))] += 1.0;
                    len = 0;
                }
            }
        }
        return hist;
    };

    const auto production = run_hist([&](int d) {
        Rng rng(uint64_t(d), "runlen");
        return sample_mask(n, rng).flags();
    });

    // independent null: rejection-sampled uniform m-subsets via mt19937
    const auto null_model = run_hist([&](int d) {
        std::mt19937 gen(uint64_t(d) * 2654435761u + 12345u);
        std::vector<uint8_t> flags(size_t(n), 0);
        int picked = 0;
        while (picked < m) {
            const int i = int(gen() % uint32_t(n));
            if (!flags[size_t(i)]) {
                flags[size_t(i)] = 1;
                ++picked;
            }
        }
        return flags;
    });

    auto chi_square = [](const std::vector<double>& a, const std::vector<double>& b) {
        double chi = 0;
        for (size_t i = 0; i < a.size(); ++i)
            if (a[i] + b[i] > 10.0) chi += (a[i] - b[i]) * (a[i] - b[i]) / (a[i] + b[i]);
        return chi;
    };
    const double chi_null = chi_square(production, null_model);
    CAPTURE(chi_null);
    CHECK(chi_null < 30.0); // ~6 dof; far below any rejection threshold

    // a span masker concentrates run lengths and must fail the same test
    const auto spans = run_hist([&](int d) {
        Rng rng(uint64_t(d), "spans");
        std::vector<uint8_t> flags(size_t(n), 0);
        int masked = 0;
        while (masked < m) {
            const int start = int(rng.below(uint64_t(n)));
            for (int i = start; i < std::min(n, start + 5) && masked < m; ++i) {
                if (!flags[size_t(i)]) {
                    flags[size_t(i)] = 1;
                    ++masked;
                }
            }
        }
        return flags;
    });
    CHECK(chi_square(spans, null_model) > 1000.0);
}
