#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hear/downstream.hpp"
#include "hear/grad_check.hpp"
#include "hear/pipeline.hpp"
#include "test_util.hpp"

using namespace hear;
using namespace hear::testutil;

namespace {

// inference layout over n tokens for a given token-per-chunk geometry
ChunkLayout make_layout(int n_tokens, int chunk, int overlap) {
    ChunkLayout layout;
    layout.mode = ChunkMode::inference;
    layout.chunk_tokens = chunk;
    layout.overlap_tokens = overlap;
    int s = 0;
    for (;;) {
        const int e = std::min(s + chunk, n_tokens);
        layout.windows.push_back({s, e});
        if (e >= n_tokens) break;
        s += chunk - overlap;
    }
    return layout;
}

template <class S>
void fill_encoder_nodes(EncoderNodes<S>& e, const EncoderConfig& cfg,
                        const std::vector<typename Tape<S>::Id>& ids, size_t& k) {
    e.cfg = cfg;
    e.layers.resize(static_cast<size_t>(cfg.layers));
    e.embed_w = ids[k++];
    e.embed_b = ids[k++];
    for (auto& l : e.layers) {
        l.wq = ids[k++]; l.bq = ids[k++];
        l.wk = ids[k++];
        l.wv = ids[k++]; l.bv = ids[k++];
        l.wo = ids[k++]; l.bo = ids[k++];
        l.ln1_g = ids[k++]; l.ln1_b = ids[k++];
        l.ln2_g = ids[k++]; l.ln2_b = ids[k++];
        l.wf1 = ids[k++]; l.bf1 = ids[k++];
        l.wf2 = ids[k++]; l.bf2 = ids[k++];
        l.rel = ids[k++];
    }
    e.final_g = ids[k++];
    e.final_b = ids[k++];
}

} // namespace

TEST_CASE("crossfade weights form a cosine partition of unity") {
    for (int len : {5, 10, 50}) {
        const auto w = crossfade_weights(len);
        for (int t = 0; t < len; ++t) {
            const double u = (t + 0.5) / len;
            CHECK(w[size_t(t)] ==
                  doctest::Approx(0.5 * (1.0 - std::cos(3.141592653589793 * u))).epsilon(1e-15));
            CHECK(w[size_t(t)] + (1.0 - w[size_t(t)]) == 1.0);
        }
    }
    // u = 0.5 lands exactly on weight 0.5 (odd lengths hit the midpoint)
    const auto w5 = crossfade_weights(5);
    CHECK(w5[2] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("crossfade merge") {
    const int d = 3;
    SUBCASE("agreeing chunks pass through bit-exactly") {
        Tape<double> tape;
        const auto layout = make_layout(16, 10, 4);
        REQUIRE(layout.windows.size() == 2);
        // chunk values agree on the shared token range
        Tensord full = random_matrix<double>(16, d, 1);
        Tensord c0({10, d}), c1({10, d});
        for (int r = 0; r < 10; ++r)
            for (int c = 0; c < d; ++c) {
                c0.at(r, c) = full.at(r, c);
                c1.at(r, c) = full.at(6 + r, c);
            }
        auto merged = crossfade_merge<double>(
            tape, {tape.constant(c0), tape.constant(c1)}, layout);
        const Tensord& m = tape.value(merged);
        REQUIRE(m.rows() == 16);
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < d; ++c) CHECK(m.at(r, c) == full.at(r, c));
    }
    SUBCASE("constant chunks stay constant through the overlap") {
        Tape<double> tape;
        const auto layout = make_layout(16, 10, 4);
        Tensord c0({10, d}, 3.25), c1({10, d}, 3.25);
        auto merged =
            crossfade_merge<double>(tape, {tape.constant(c0), tape.constant(c1)}, layout);
        for (double v : tape.value(merged).data) CHECK(v == 3.25);
    }
    SUBCASE("a 0 -> 1 overlap follows the closed-form cosine ramp") {
        Tape<double> tape;
        const auto layout = make_layout(30, 20, 10);
        Tensord c0({20, d}, 0.0), c1({20, d}, 1.0);
        auto merged =
            crossfade_merge<double>(tape, {tape.constant(c0), tape.constant(c1)}, layout);
        const Tensord& m = tape.value(merged);
        // rows 0..9 from chunk 0, overlap rows 10..19, tail rows 20..29
        for (int r = 0; r < 10; ++r) CHECK(m.at(r, 0) == 0.0);
        for (int t = 0; t < 10; ++t) {
            const double u = (t + 0.5) / 10.0;
            const double expect = 0.5 * (1.0 - std::cos(3.141592653589793 * u));
            CHECK(m.at(10 + t, 0) == doctest::Approx(expect).epsilon(1e-12));
        }
        for (int r = 20; r < 30; ++r) CHECK(m.at(r, 0) == 1.0);
    }
    SUBCASE("single chunk is the identity") {
        Tape<double> tape;
        const auto layout = make_layout(8, 10, 4);
        auto c0 = tape.constant(random_matrix<double>(8, d, 2));
        auto merged = crossfade_merge<double>(tape, {c0}, layout);
        CHECK(merged == c0);
    }
    SUBCASE("three chunks cover the full sequence") {
        Tape<double> tape;
        const auto layout = make_layout(22, 10, 4);
        REQUIRE(layout.windows.size() == 3);
        std::vector<Taped::Id> chunks;
        for (const auto& w : layout.windows)
            chunks.push_back(tape.constant(random_matrix<double>(w.length(), d, 40 + w.begin)));
        auto merged = crossfade_merge<double>(tape, chunks, layout);
        CHECK(tape.value(merged).rows() == 22);
    }
    SUBCASE("mismatched feature lengths are rejected") {
        Tape<double> tape;
        const auto layout = make_layout(16, 10, 4);
        auto c0 = tape.constant(random_matrix<double>(9, d, 3));
        auto c1 = tape.constant(random_matrix<double>(10, d, 4));
        CHECK_THROWS_AS(crossfade_merge<double>(tape, {c0, c1}, layout), NumericError);
    }
    SUBCASE("pretrain layouts are rejected") {
        Tape<double> tape;
        ChunkLayout layout;
        layout.mode = ChunkMode::pretrain;
        layout.windows.push_back({0, 8});
        auto c0 = tape.constant(random_matrix<double>(8, d, 5));
        CHECK_THROWS_AS(crossfade_merge<double>(tape, {c0}, layout), NumericError);
    }
}

TEST_CASE("feature gating") {
    const int dp = 2, bins = 5, hidden = 4, T = 3;
    SUBCASE("zero gate weights halve the projected spectrum") {
        Tape<double> tape;
        GateWeights<double> g;
        g.ws = random_matrix<double>(dp, bins, 6);
        g.bs = Tensord({dp}, std::vector<double>{0.3, -0.2});
        g.wg = Tensord({dp, hidden}, 0.0);
        g.bg = Tensord({dp}, 0.0);
        auto nodes = stage_gate(tape, g, false);
        auto merged = tape.constant(random_matrix<double>(T, hidden, 7));
        auto spectrum = tape.constant(random_matrix<double>(T, bins, 8));
        auto fused = gate_fuse(tape, merged, spectrum, nodes);
        auto v = tape.linear(spectrum, nodes.ws, nodes.bs);
        const Tensord& f = tape.value(fused);
        const Tensord& vv = tape.value(v);
        REQUIRE(f.cols() == hidden + dp);
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < dp; ++c)
                CHECK(f.at(t, hidden + c) == doctest::Approx(0.5 * vv.at(t, c)).epsilon(1e-12));
    }
    SUBCASE("a saturated gate passes the projection through") {
        Tape<double> tape;
        GateWeights<double> g;
        g.ws = random_matrix<double>(dp, bins, 9);
        g.bs = Tensord({dp}, 0.1);
        g.wg = Tensord({dp, hidden}, 0.0);
        g.bg = Tensord({dp}, 1e6);
        auto nodes = stage_gate(tape, g, false);
        auto merged = tape.constant(random_matrix<double>(T, hidden, 10));
        auto spectrum = tape.constant(random_matrix<double>(T, bins, 11));
        auto fused = gate_fuse(tape, merged, spectrum, nodes);
        auto v = tape.linear(spectrum, nodes.ws, nodes.bs);
        const Tensord& f = tape.value(fused);
        const Tensord& vv = tape.value(v);
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < dp; ++c)
                CHECK(f.at(t, hidden + c) == doctest::Approx(vv.at(t, c)).epsilon(1e-9));
    }
    SUBCASE("d_p = 2 toy matches hand matrix arithmetic") {
        Tape<double> tape;
        GateWeights<double> g;
        g.ws = Tensord({2, 3}, std::vector<double>{1, 0, -1, 0.5, 0.5, 0});
        g.bs = Tensord({2}, std::vector<double>{0.1, -0.1});
        g.wg = Tensord({2, 2}, std::vector<double>{1, -1, 2, 0});
        g.bg = Tensord({2}, std::vector<double>{0, 0.5});
        auto nodes = stage_gate(tape, g, false);
        Tensord h({1, 2}, std::vector<double>{0.4, -0.2});
        Tensord s({1, 3}, std::vector<double>{1.0, 2.0, 3.0});
        auto fused = gate_fuse(tape, tape.constant(h), tape.constant(s), nodes);
        const Tensord& f = tape.value(fused);

        const double v0 = 1 * 1.0 + 0 * 2.0 + (-1) * 3.0 + 0.1;      // -1.9
        const double v1 = 0.5 * 1.0 + 0.5 * 2.0 + 0 * 3.0 - 0.1;     // 1.4
        const double g0 = 1.0 / (1.0 + std::exp(-(0.4 * 1 + (-0.2) * (-1))));
        const double g1 = 1.0 / (1.0 + std::exp(-(0.4 * 2 + 0 + 0.5)));
        CHECK(f.at(0, 0) == 0.4);
        CHECK(f.at(0, 1) == -0.2);
        CHECK(f.at(0, 2) == doctest::Approx(g0 * v0).epsilon(1e-12));
        CHECK(f.at(0, 3) == doctest::Approx(g1 * v1).epsilon(1e-12));
    }
    SUBCASE("gate values stay strictly inside (0, 1)") {
        Tape<double> tape;
        auto g = GateWeights<double>::random_init(dp, bins, hidden, 12);
        auto nodes = stage_gate(tape, g, false);
        auto merged = tape.constant(random_matrix<double>(50, hidden, 13, 3.0));
        auto gate = tape.sigmoid(tape.linear(merged, nodes.wg, nodes.bg));
        for (double v : tape.value(gate).data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("statistics pooling") {
    SUBCASE("a single timestep pools to itself with zero std") {
        Tape<double> tape;
        const auto x = random_matrix<double>(1, 4, 14);
        auto pooled = pool_stats(tape, tape.constant(x));
        const Tensord& p = tape.value(pooled);
        REQUIRE(p.cols() == 12);
        for (int c = 0; c < 4; ++c) {
            CHECK(p.at(0, c) == x.at(0, c));     // mean
            CHECK(p.at(0, 4 + c) == 0.0);        // std exactly zero
            CHECK(p.at(0, 8 + c) == x.at(0, c)); // max
        }
    }
    SUBCASE("time permutation leaves pooled statistics unchanged") {
        // dyadic values make the permuted sums exact
        Tape<double> tape;
        Tensord x({4, 2}, std::vector<double>{0.5, 1.25, -0.75, 2.0, 0.25, -1.5, 1.0, 0.125});
        Tensord perm({4, 2}, std::vector<double>{1.0, 0.125, 0.5, 1.25, 0.25, -1.5, -0.75, 2.0});
        auto a = pool_stats(tape, tape.constant(x));
        auto b = pool_stats(tape, tape.constant(perm));
        CHECK(tape.value(a).data == tape.value(b).data);
    }
    SUBCASE("hand-computed statistics for a 3x2 toy") {
        Tape<double> tape;
        Tensord x({3, 2}, std::vector<double>{1.0, -2.0, 3.0, 0.0, 5.0, 4.0});
        auto pooled = pool_stats(tape, tape.constant(x));
        const Tensord& p = tape.value(pooled);
        CHECK(p.at(0, 0) == doctest::Approx(3.0).epsilon(1e-12));           // mean col 0
        CHECK(p.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));     // mean col 1
        CHECK(p.at(0, 2) == doctest::Approx(std::sqrt(8.0 / 3.0)).epsilon(1e-12));
        CHECK(p.at(0, 3) == doctest::Approx(std::sqrt(56.0 / 9.0)).epsilon(1e-12));
        CHECK(p.at(0, 4) == 5.0);
        CHECK(p.at(0, 5) == 4.0);
    }
    SUBCASE("std is zero exactly when a dimension is constant") {
        Tape<double> tape;
        Tensord x({4, 2});
        for (int r = 0; r < 4; ++r) {
            x.at(r, 0) = 1.75;            // constant
            x.at(r, 1) = 0.5 * (r + 1);   // varying
        }
        auto pooled = pool_stats(tape, tape.constant(x));
        const Tensord& p = tape.value(pooled);
        CHECK(p.at(0, 2) == 0.0);
        CHECK(p.at(0, 3) > 0.0);
    }
}

TEST_CASE("downstream forward wiring") {
    FrontendConfig fe = desk_frontend(); // 50 tokens/s, 1 s chunks, 0.2 s overlap
    const EncoderConfig acoustic{8, 16, 2, 1, 4, fe.patch_width()};
    const EncoderConfig task{8, 16, 2, 1, 4, 8};
    const int dp = 2, classes = 3;

    SUBCASE("no_spectrum mode is exactly invariant to spectrum changes") {
        auto w = DownstreamWeights<float>::random_init(acoustic, task, dp, fe.spectrum_bins(), 8,
                                                       classes, FineTuneMode::no_spectrum, 80);
        const auto patches = random_matrix<float>(75, fe.patch_width(), 20);
        const auto s1 = random_matrix<float>(75, fe.spectrum_bins(), 21);
        auto s2 = s1;
        for (float& v : s2.data) v = -v * 17.0f + 3.0f;

        Tape<float> t1, t2;
        auto n1 = stage_downstream(t1, w, false);
        auto n2 = stage_downstream(t2, w, false);
        auto l1 = downstream_logits(t1, n1, t1.constant(patches), t1.constant(s1), fe);
        auto l2 = downstream_logits(t2, n2, t2.constant(patches), t2.constant(s2), fe);
        CHECK(t1.value(l1).data == t2.value(l2).data);
    }
    SUBCASE("spectrum perturbations do reach base-mode outputs") {
        auto w = DownstreamWeights<float>::random_init(acoustic, task, dp, fe.spectrum_bins(), 8,
                                                       classes, FineTuneMode::base, 81);
        const auto patches = random_matrix<float>(75, fe.patch_width(), 22);
        const auto s1 = random_matrix<float>(75, fe.spectrum_bins(), 23);
        auto s2 = s1;
        for (float& v : s2.data) v += 1.0f;
        Tape<float> t1, t2;
        auto n1 = stage_downstream(t1, w, false);
        auto n2 = stage_downstream(t2, w, false);
        auto l1 = downstream_logits(t1, n1, t1.constant(patches), t1.constant(s1), fe);
        auto l2 = downstream_logits(t2, n2, t2.constant(patches), t2.constant(s2), fe);
        CHECK(t1.value(l1).data != t2.value(l2).data);
    }
    SUBCASE("transfer mode freezes the acoustic encoder") {
        auto w = DownstreamWeights<float>::random_init(acoustic, task, dp, fe.spectrum_bins(), 8,
                                                       classes, FineTuneMode::transfer, 82);
        const auto patches = random_matrix<float>(60, fe.patch_width(), 24);
        const auto spectrum = random_matrix<float>(60, fe.spectrum_bins(), 25);
        Tape<float> tape;
        auto nodes = stage_downstream(tape, w, true);
        auto logits =
            downstream_logits(tape, nodes, tape.constant(patches), tape.constant(spectrum), fe);
        auto loss = tape.cross_entropy_rows(logits, {1});
        tape.backward(loss);

        double acoustic_grad = 0.0, rest_grad = 0.0;
        nodes.for_each([&](const std::string& name, Tape<float>::Id id) {
            if (name.rfind("acoustic/", 0) == 0) {
                CHECK_FALSE(tape.trainable(id));
                if (tape.has_grad(id))
                    for (float g : tape.grad(id).data) acoustic_grad += std::fabs(g);
            } else {
                CHECK(tape.trainable(id));
                for (float g : tape.grad(id).data) rest_grad += std::fabs(g);
            }
        });
        CHECK(acoustic_grad == 0.0);
        CHECK(rest_grad > 0.0);
    }
    SUBCASE("transfer mode stores no acoustic optimizer state") {
        auto w = DownstreamWeights<float>::random_init(acoustic, task, dp, fe.spectrum_bins(), 8,
                                                       classes, FineTuneMode::transfer, 83);
        ClipData clip;
        clip.patches = random_matrix<float>(60, fe.patch_width(), 26);
        clip.spectrum = random_matrix<float>(60, fe.spectrum_bins(), 27);
        clip.label = 0;
        AdamW<float> opt;
        finetune_step(w, {&clip}, opt, 1e-3, fe);
        CHECK_FALSE(opt.slots().empty());
        for (const auto& [name, slot] : opt.slots()) CHECK(name.rfind("acoustic/", 0) != 0);
    }
    SUBCASE("chunked forward handles multi-chunk inputs") {
        auto w = DownstreamWeights<float>::random_init(acoustic, task, dp, fe.spectrum_bins(), 8,
                                                       classes, FineTuneMode::base, 84);
        // 2.0 s at 50 tokens/s -> 100 tokens -> windows [0,50], [40,90], [80,100]
        const auto patches = random_matrix<float>(100, fe.patch_width(), 28);
        const auto spectrum = random_matrix<float>(100, fe.spectrum_bins(), 29);
        Tape<float> tape;
        auto nodes = stage_downstream(tape, w, false);
        auto logits =
            downstream_logits(tape, nodes, tape.constant(patches), tape.constant(spectrum), fe);
        const Tensorf& l = tape.value(logits);
        CHECK(l.rows() == 1);
        CHECK(l.cols() == classes);
        CHECK(l.all_finite());
        CHECK(layout_chunks(100, ChunkMode::inference, fe).windows.size() == 3);
    }
}

TEST_CASE("end-to-end gradient check through merge, gate, task, pooling, head") {
    // short chunks keep the toy non-degenerate: 0.2 s windows, 0.1 s overlap
    FrontendConfig fe = desk_frontend();
    fe.n_mels = 4;
    fe.chunk_seconds = 0.2;
    fe.overlap_seconds = 0.1;
    const EncoderConfig acoustic{4, 8, 1, 1, 3, fe.patch_width()};
    const EncoderConfig task{4, 8, 1, 1, 3, 4};
    const int dp = 2, classes = 2;
    auto weights = DownstreamWeights<double>::random_init(acoustic, task, dp, fe.spectrum_bins(),
                                                          4, classes, FineTuneMode::base, 85);
    uint64_t salt = 500;
    weights.for_each([&](const std::string&, Tensord& t) { randomize(t, ++salt, 0.5); });

    // 15 tokens -> two chunks [0,10], [5,15] with a 5-token blend
    const auto patches = random_matrix<double>(15, fe.patch_width(), 30);
    const auto spectrum = random_matrix<double>(15, fe.spectrum_bins(), 31);
    REQUIRE(layout_chunks(15, ChunkMode::inference, fe).windows.size() == 2);

    std::vector<Tensord> params;
    std::vector<std::string> names;
    weights.for_each([&](const std::string& n, Tensord& t) {
        names.push_back(n);
        params.push_back(t);
    });

    auto build = [&](Taped& tape, const std::vector<Taped::Id>& ids) {
        DownstreamNodes<double> nodes;
        nodes.mode = FineTuneMode::base;
        size_t k = 0;
        fill_encoder_nodes(nodes.acoustic, weights.acoustic.cfg, ids, k);
        nodes.gate.ws = ids[k++];
        nodes.gate.bs = ids[k++];
        nodes.gate.wg = ids[k++];
        nodes.gate.bg = ids[k++];
        fill_encoder_nodes(nodes.task, weights.task.cfg, ids, k);
        nodes.head.w1 = ids[k++];
        nodes.head.b1 = ids[k++];
        nodes.head.w2 = ids[k++];
        nodes.head.b2 = ids[k++];
        REQUIRE(k == ids.size());
        auto logits = downstream_logits(tape, nodes, tape.constant(patches),
                                        tape.constant(spectrum), fe);
        return tape.cross_entropy_rows(logits, {1});
    };
    const auto report = grad_check(build, params, names, 1e-4, 6);
    CAPTURE(report.worst_param);
    CAPTURE(report.worst_coord);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("fine-tune mode names round trip") {
    for (auto mode : {FineTuneMode::base, FineTuneMode::scratch, FineTuneMode::no_spectrum,
                      FineTuneMode::transfer})
        CHECK(finetune_mode_from(to_string(mode)) == mode);
    CHECK_THROWS_AS(finetune_mode_from("finetune_all"), ConfigError);
}
