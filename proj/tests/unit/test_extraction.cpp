#include <doctest.h>

#include <random>

#include "netseg/extraction.hpp"
#include "netseg/metrics.hpp"
#include "netseg/phantom.hpp"
#include "oracles.hpp"

using namespace netseg;

namespace {

Mask mask_of(std::vector<std::uint8_t> v) {
  const Shape3 s{1, 1, v.size()};
  return Mask(s, std::move(v));
}

MultiModalRecord phantom(std::uint64_t seed, std::size_t net_voxels, std::string id) {
  PhantomSpec s;
  s.seed = seed;
  s.target_net_voxels = net_voxels;
  return generate(s, std::move(id));
}

ExtractionConfig unfiltered() {
  ExtractionConfig c;
  c.filters.clear();
  return c;
}

}  // namespace

TEST_CASE("split of the fused label") {
  const Mask fused = mask_of({1, 1, 1, 0, 1});
  const Mask sub = mask_of({1, 0, 0, 1, 0});
  const auto sp = split_fused(fused, sub, nullptr, {});
  CHECK(sp.raw_net == mask_of({0, 1, 1, 0, 1}));
  CHECK(sp.net == sp.raw_net);
  CHECK(sp.ncr == mask_of({1, 0, 0, 0, 0}));
  CHECK(predict_ncr(mask_of({1, 1, 0}), mask_of({0, 1, 0})) == mask_of({1, 0, 0}));
  CHECK_THROWS_AS(split_fused(fused, mask_of({1, 0}), nullptr, {}), Error);
}

TEST_CASE("NET and NCR partition the fused label") {
  std::mt19937_64 rng(61);
  for (int t = 0; t < 60; ++t) {
    const Shape3 s = oracle::random_shape(rng, 8);
    const Mask fused = oracle::random_mask(rng, s, 0.5);
    const Mask sub = oracle::random_mask(rng, s, 0.3);
    const Mask ed = oracle::complement(fused);
    const auto sp = split_fused(fused, sub, &ed, default_net_filters());
    const Mask in_fused = [&] {
      Mask m(s);
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = sp.net[i] && fused[i];
      return m;
    }();
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!fused[i]) continue;
      CHECK(in_fused[i] + sp.ncr[i] == 1);
      // voxels the subtrahend covers never become NET
      if (sub[i]) CHECK_FALSE(sp.net[i]);
    }
    CHECK(oracle::subset(sp.raw_net, fused));
  }
}

TEST_CASE("raw NET shrinks as the subtrahend grows") {
  std::mt19937_64 rng(62);
  for (int t = 0; t < 60; ++t) {
    const Shape3 s = oracle::random_shape(rng, 7);
    const Mask fused = oracle::random_mask(rng, s, 0.6);
    const Mask small = oracle::random_mask(rng, s, 0.2);
    Mask big = oracle::random_mask(rng, s, 0.2);
    for (std::size_t i = 0; i < big.size(); ++i) big[i] = big[i] || small[i];
    CHECK(oracle::subset(split_fused(fused, big, nullptr, {}).raw_net, split_fused(fused, small, nullptr, {}).raw_net));
  }
}

TEST_CASE("exact predictions recover NET exactly before filtering") {
  CohortSpec cohort;
  cohort.n = 4;
  cohort.seed = 7;
  for (const auto& spec : cohort_specs(cohort)) {
    const LabelVolume truth = generate_labels(spec);
    const LabelVolume fused = fuse_to_schema(truth, Schema::Brats2018);
    const auto segs = compose_segments(truth);
    const auto r = extract_net(fused, segs.at(Segment::TC), segs.at(Segment::ET), unfiltered(), "r");
    CHECK(r.net_mask == segs.at(Segment::NET));
    CHECK(r.raw_net_voxels == oracle::count(segs.at(Segment::NET)));
    CHECK(r.relabeled == truth);

    ExtractionConfig filtered;
    const auto f = extract_net(fused, segs.at(Segment::TC), segs.at(Segment::ET), filtered, "r");
    CHECK(dice(f.net_mask, segs.at(Segment::NET)) >= 0.9);
    // whole tumor is untouched by relabeling
    CHECK(compose_segments(f.relabeled).at(Segment::WT) == segs.at(Segment::WT));

    ExtractionConfig minus_tc = unfiltered();
    minus_tc.subtract_mode = SubtractMode::MinusTcPred;
    CHECK(extract_net(fused, segs.at(Segment::TC), segs.at(Segment::ET), minus_tc).net_mask == segs.at(Segment::NET));
  }
}

TEST_CASE("extraction input checks") {
  const auto rec = phantom(1, 400, "r");
  const auto segs = compose_segments(*rec.labels);
  CHECK_THROWS_AS(extract_net(*rec.labels, segs.at(Segment::TC), segs.at(Segment::ET), unfiltered()), Error);
  const LabelVolume fused = fuse_to_schema(*rec.labels, Schema::Brats2018);
  try {
    extract_net(fused, upscale_repeat(segs.at(Segment::TC), 2), upscale_repeat(segs.at(Segment::ET), 2), unfiltered());
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  ExtractionConfig bad;
  bad.prediction_threshold = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("dataset extraction with the oracle") {
  std::vector<MultiModalRecord> recs;
  std::map<std::string, LabelVolume> truth;
  const std::size_t volumes[] = {150, 900, 1000, 1100, 1300, 2600};
  for (std::size_t i = 0; i < 6; ++i) {
    auto r = phantom(10 + i, volumes[i], "rec" + std::to_string(5 - i));
    truth.emplace(r.record_id, *r.labels);
    r.labels = fuse_to_schema(*r.labels, Schema::Brats2018);
    recs.push_back(std::move(r));
  }
  OraclePredictor oracle_model(truth, {Segment::ET, Segment::TC, Segment::WT});
  const auto out = run_dataset_extraction(recs, oracle_model, unfiltered());
  REQUIRE(out.results.size() == 6);
  CHECK(out.errors.empty());
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& r = out.results[i];
    CHECK(r.record_id == "rec" + std::to_string(i));
    CHECK(r.relabeled == truth.at(r.record_id));
    CHECK(r.net_voxels == volumes[5 - i]);
    CHECK(r.group.has_value());
  }
  CHECK(out.partition.groups.at("rec5") == VolumeGroup::Low);
  CHECK(out.partition.groups.at("rec0") == VolumeGroup::High);
  for (const auto& id : out.training_subset) CHECK(out.partition.groups.at(id) == VolumeGroup::Medium);

  OraclePredictor no_tc(truth, {Segment::ET, Segment::WT});
  try {
    run_dataset_extraction(recs, no_tc, unfiltered());
    FAIL("expected ModelSegmentMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ModelSegmentMismatch);
  }
}

TEST_CASE("refinement with an exact NET model keeps labels") {
  auto rec = phantom(3, 800, "a");
  const LabelVolume truth = *rec.labels;
  OraclePredictor net_model({{"a", truth}}, {Segment::NET});
  std::vector<RefineReport> rep;
  const auto out = refine_dataset({rec}, net_model, unfiltered(), &rep);
  CHECK(*out[0].labels == truth);
  CHECK(rep[0].net_before == 800);
  CHECK(rep[0].net_after == 800);

  // an empty NET prediction sends every NET voxel back to NCR
  LabelVolume no_net = truth;
  for (std::size_t i = 0; i < no_net.size(); ++i)
    if (no_net[i] == 3) no_net[i] = 0;
  OraclePredictor empty({{"a", no_net}}, {Segment::NET});
  const auto cleared = refine_dataset({rec}, empty, unfiltered(), &rep);
  auto c = count_label_voxels(*cleared[0].labels);
  CHECK(c[3] == 0);
  CHECK(c[1] == count_label_voxels(truth)[1] + 800);
}

TEST_CASE("samples for the network") {
  const auto rec = phantom(2, 300, "s");
  const auto segs = schema_segments(Schema::Unified4Label);
  CHECK(segs.size() == 5);
  const auto smp = make_sample(rec, segs, 2);
  CHECK(smp.input_shape == rec.shape());
  CHECK(smp.input.size() == 4 * rec.shape().size());
  CHECK(smp.target_shape == rec.shape() * 2);
  const auto composed = compose_segments(upscale_repeat(*rec.labels, 2));
  const std::size_t n = smp.target_shape.size();
  for (std::size_t s = 0; s < segs.size(); ++s)
    for (std::size_t i = 0; i < n; i += 7) CHECK(smp.target[s * n + i] == composed.at(segs[s])[i]);
  CHECK(make_input(rec).input == smp.input);
  CHECK(schema_segments(Schema::Brats2021) == std::vector<Segment>{Segment::ET, Segment::TC, Segment::WT});
}

TEST_CASE("extraction config json") {
  ExtractionConfig c;
  c.subtract_mode = SubtractMode::MinusTcPred;
  c.prediction_threshold = 0.4;
  c.reassign_predicted_et = true;
  CHECK(to_json(extraction_config_from_json(to_json(c))) == to_json(c));
  CHECK(parse_subtract_mode(to_string(SubtractMode::MinusNcrPred)) == SubtractMode::MinusNcrPred);
}
