#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ecgfuse/error.hpp"
#include "ecgfuse/fusion.hpp"
#include "ecgfuse/rng.hpp"

using namespace ecgfuse;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no ecgfuse::Error thrown");
    return ErrorCode::ConfigInvalid;
}

PerLead<Spectrogram> random_tiles(Rng& rng, std::size_t rows, std::size_t cols) {
    PerLead<Spectrogram> specs;
    for (auto& s : specs) {
        s = Spectrogram(rows, cols);
        for (auto& v : s->values) v = rng.normal();
        s->normalized = true;
    }
    return specs;
}

PerLead<FeatureVector> random_bundle(Rng& rng, std::size_t tau) {
    PerLead<FeatureVector> bundle;
    for (std::size_t l = 0; l < kNumLeads; ++l) {
        FeatureVector fv;
        fv.values.resize(tau);
        for (auto& v : fv.values) v = rng.normal() * 10.0;
        fv.backend_id = "test";
        fv.source = FeatureSource::single_lead(kAllLeads[l], 0);
        bundle[l] = std::move(fv);
    }
    return bundle;
}

Prediction random_prediction(Rng& rng, std::size_t classes) {
    Prediction p;
    p.probs.resize(classes);
    double total = 0.0;
    for (auto& v : p.probs) total += v = rng.uniform(0.01, 1.0);
    for (auto& v : p.probs) v /= total;
    p.label = argmax(p.probs);
    return p;
}

Prediction from_probs(std::vector<double> probs) {
    Prediction p;
    p.probs = std::move(probs);
    p.label = argmax(p.probs);
    return p;
}

template <typename T>
PerLead<T> permuted(const PerLead<T>& bundle, Rng& rng) {
    std::array<std::size_t, kNumLeads> order;
    for (std::size_t i = 0; i < kNumLeads; ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    PerLead<T> out;
    for (std::size_t i = 0; i < kNumLeads; ++i) out[i] = bundle[order[i]];
    return out;
}

}  // namespace

TEST_CASE("stacked grid layout") {
    CHECK(grid_cell(LeadId::I).row == 0);
    CHECK(grid_cell(LeadId::I).col == 0);
    CHECK(grid_cell(LeadId::aVR).row == 0);
    CHECK(grid_cell(LeadId::aVR).col == 1);
    CHECK(grid_cell(LeadId::V1).col == 2);
    CHECK(grid_cell(LeadId::V4).col == 3);
    CHECK(grid_cell(LeadId::II).row == 1);
    CHECK(grid_cell(LeadId::aVL).row == 1);
    CHECK(grid_cell(LeadId::aVL).col == 1);
    CHECK(grid_cell(LeadId::V5).row == 1);
    CHECK(grid_cell(LeadId::V5).col == 3);
    CHECK(grid_cell(LeadId::III).row == 2);
    CHECK(grid_cell(LeadId::aVF).col == 1);
    CHECK(grid_cell(LeadId::V3).col == 2);
    CHECK(grid_cell(LeadId::V6).row == 2);
    CHECK(grid_cell(LeadId::V6).col == 3);
}

TEST_CASE("data_fuse builds a 78 x 364 grid and every tile round trips") {
    Rng rng(1);
    const auto specs = random_tiles(rng, 26, 91);
    const auto stacked = data_fuse(specs, 4);
    CHECK(stacked.grid.rows == 78);
    CHECK(stacked.grid.cols == 364);
    CHECK(stacked.window == 4);
    CHECK(stacked.grid.normalized);
    CHECK(stacked.tile(LeadId::aVR) == *specs[index_of(LeadId::aVR)]);
    // cell (row 0, col 1) read straight out of the grid
    for (std::size_t r = 0; r < 26; ++r) {
        for (std::size_t c = 0; c < 91; ++c) CHECK(stacked.grid.at(r, 91 + c) == specs[index_of(LeadId::aVR)]->at(r, c));
    }
    for (LeadId lead : kAllLeads) CHECK(stacked.tile(lead) == *specs[index_of(lead)]);
}

TEST_CASE("data_fuse preconditions") {
    Rng rng(2);
    auto specs = random_tiles(rng, 4, 5);
    auto missing = specs;
    missing[index_of(LeadId::V2)].reset();
    CHECK(code_of([&] { data_fuse(missing, 0); }) == ErrorCode::MissingLead);
    auto ragged = specs;
    ragged[3] = Spectrogram(4, 6);
    ragged[3]->normalized = true;
    CHECK(code_of([&] { data_fuse(ragged, 0); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("feature_concat lengths and segments") {
    Rng rng(3);
    for (std::size_t tau : {1056u, 2048u, 7u}) {
        const auto bundle = random_bundle(rng, tau);
        const auto cat = feature_concat(bundle);
        CHECK(cat.size() == 12 * tau);
        for (std::size_t l = 0; l < kNumLeads; ++l) {
            CHECK(std::equal(bundle[l]->values.begin(), bundle[l]->values.end(), cat.values.begin() + l * tau));
        }
    }
    PerLead<FeatureVector> zeros;
    for (auto& z : zeros) z = FeatureVector{std::vector<double>(9, 0.0), "z", {}};
    for (double v : feature_concat(zeros).values) CHECK(v == 0.0);
}

TEST_CASE("concat then split is the identity and preserves the squared norm") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto bundle = random_bundle(rng, 1 + rng.below(40));
        const auto cat = feature_concat(bundle);
        const auto parts = feature_split(cat);
        double sum_sq = 0.0;
        for (std::size_t l = 0; l < kNumLeads; ++l) {
            CHECK(parts[l].values == bundle[l]->values);
            for (double v : bundle[l]->values) sum_sq += v * v;
        }
        double cat_sq = 0.0;
        for (double v : cat.values) cat_sq += v * v;
        CHECK(cat_sq == doctest::Approx(sum_sq).epsilon(1e-12));
    }
}

TEST_CASE("feature_accumulate examples") {
    Rng rng(5);
    const auto one = random_bundle(rng, 16);
    PerLead<FeatureVector> same;
    for (auto& s : same) s = *one[0];
    const auto mean = feature_accumulate(same);
    for (std::size_t i = 0; i < 16; ++i) CHECK(mean.values[i] == doctest::Approx(one[0]->values[i]).epsilon(1e-15));

    PerLead<FeatureVector> alternating;
    for (std::size_t l = 0; l < kNumLeads; ++l) {
        FeatureVector fv = *one[0];
        if (l % 2) {
            for (auto& v : fv.values) v = -v;
        }
        alternating[l] = fv;
    }
    for (double v : feature_accumulate(alternating).values) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("feature_accumulate matches a scalar loop oracle") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t tau = 1 + rng.below(64);
        const auto bundle = random_bundle(rng, tau);
        const auto got = feature_accumulate(bundle);
        REQUIRE(got.size() == tau);
        for (std::size_t i = 0; i < tau; ++i) {
            long double acc = 0.0L;
            for (std::size_t l = 0; l < kNumLeads; ++l) acc += bundle[l]->values[i];
            CHECK(std::abs(got.values[i] - static_cast<double>(acc / 12.0L)) <= 1e-12);
        }
    }
}

TEST_CASE("feature fusion preconditions") {
    Rng rng(7);
    auto bundle = random_bundle(rng, 8);
    auto missing = bundle;
    missing[0].reset();
    CHECK(code_of([&] { feature_concat(missing); }) == ErrorCode::MissingLead);
    CHECK(code_of([&] { feature_accumulate(missing); }) == ErrorCode::MissingLead);
    auto ragged = bundle;
    ragged[5]->values.push_back(1.0);
    CHECK(code_of([&] { feature_concat(ragged); }) == ErrorCode::TauMismatch);
    CHECK(code_of([&] { feature_accumulate(ragged); }) == ErrorCode::TauMismatch);
}

TEST_CASE("accumulations are permutation invariant, concatenation is not") {
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const auto bundle = random_bundle(rng, 12);
        auto shuffled = permuted(bundle, rng);
        // force a non-identity permutation
        std::swap(shuffled[0], shuffled[11]);
        const auto a = feature_accumulate(bundle), b = feature_accumulate(shuffled);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.values[i] - b.values[i]) <= 1e-12);
        CHECK(feature_concat(bundle).values != feature_concat(shuffled).values);

        PerLead<Prediction> preds;
        for (auto& p : preds) p = random_prediction(rng, 4);
        const auto pa = decision_accumulate(preds), pb = decision_accumulate(permuted(preds, rng));
        for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(pa.probs[c] - pb.probs[c]) <= 1e-12);
    }
}

TEST_CASE("decision_accumulate examples") {
    PerLead<Prediction> acute;
    for (auto& p : acute) p = from_probs({1, 0, 0, 0});
    const auto a = decision_accumulate(acute);
    CHECK(a.probs == std::vector<double>{1, 0, 0, 0});
    CHECK(a.label == 0);

    // six uniform leads and six one-hot Normal leads (Normal is the last onset class here)
    PerLead<Prediction> mixed;
    for (std::size_t l = 0; l < kNumLeads; ++l) {
        mixed[l] = l < 6 ? from_probs({0.25, 0.25, 0.25, 0.25}) : from_probs({0, 0, 0, 1});
    }
    const auto m = decision_accumulate(mixed);
    CHECK(m.probs[0] == doctest::Approx(0.125));
    CHECK(m.probs[1] == doctest::Approx(0.125));
    CHECK(m.probs[2] == doctest::Approx(0.125));
    CHECK(m.probs[3] == doctest::Approx(0.625));
    CHECK(m.label == 3);

    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        PerLead<Prediction> preds;
        const std::size_t classes = 2 + rng.below(4);
        for (auto& p : preds) p = random_prediction(rng, classes);
        const auto fused = decision_accumulate(preds);
        double total = 0.0;
        for (double v : fused.probs) {
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) <= 1e-6);
        CHECK(fused.label == argmax(fused.probs));
    }
}

TEST_CASE("decision_accumulate preconditions") {
    PerLead<Prediction> preds;
    for (auto& p : preds) p = from_probs({0.5, 0.5});
    auto missing = preds;
    missing[2].reset();
    CHECK(code_of([&] { decision_accumulate(missing); }) == ErrorCode::MissingLead);
    auto bad = preds;
    bad[4] = from_probs({0.5, 0.6});
    CHECK(code_of([&] { decision_accumulate(bad); }) == ErrorCode::NotNormalized);
    CHECK(code_of([&] { majority_vote(missing); }) == ErrorCode::MissingLead);
}

TEST_CASE("majority_vote examples") {
    PerLead<Prediction> seven_five;
    for (std::size_t l = 0; l < kNumLeads; ++l) {
        seven_five[l] = l < 7 ? from_probs({0.7, 0.1, 0.1, 0.1}) : from_probs({0.1, 0.1, 0.7, 0.1});
    }
    CHECK(majority_vote(seven_five) == 0);

    PerLead<Prediction> tie;
    for (std::size_t l = 0; l < kNumLeads; ++l) {
        // Acute voters put 0.6 on Acute, Old voters 0.8 on Old; mean over leads favours Old
        tie[l] = l < 6 ? from_probs({0.6, 0.2, 0.1, 0.1}) : from_probs({0.1, 0.05, 0.8, 0.05});
    }
    CHECK(majority_vote(tie) == 2);

    PerLead<Prediction> normal;
    for (auto& p : normal) p = from_probs({0.1, 0.1, 0.1, 0.7});
    CHECK(majority_vote(normal) == 3);
}

TEST_CASE("majority_vote is unchanged by a monotone rescaling of every lead") {
    Rng rng(10);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        PerLead<Prediction> preds;
        for (auto& p : preds) p = random_prediction(rng, 4);
        std::array<int, 4> votes{};
        for (const auto& p : preds) ++votes[p->label];
        const int top = *std::max_element(votes.begin(), votes.end());
        if (std::count(votes.begin(), votes.end(), top) > 1) continue;  // tie-break would engage
        const std::size_t base = majority_vote(preds);
        auto rescaled = preds;
        for (auto& p : rescaled) {
            for (auto& v : p->probs) v = std::exp(3.0 * v) - 0.5;
            p->label = argmax(p->probs);
        }
        CHECK(majority_vote(rescaled) == base);
        ++checked;
    }
    CHECK(checked > 100);
}

TEST_CASE("fusion names") {
    for (auto s : {FusionStrategy::Data, FusionStrategy::FeatureConcat, FusionStrategy::FeatureAccum,
                   FusionStrategy::DecisionAccum, FusionStrategy::DecisionVote}) {
        CHECK(parse_fusion(fusion_name(s)) == s);
    }
    CHECK(uses_stacked_input(FusionStrategy::Data));
    CHECK(is_decision_fusion(FusionStrategy::DecisionVote));
    CHECK_FALSE(is_decision_fusion(FusionStrategy::FeatureAccum));
}
