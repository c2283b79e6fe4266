// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
// Usage: acceptance [criterion numbers...]

#include <chrono>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "gradcheck.hpp"
#include "netseg/cli.hpp"
#include "netseg/extraction.hpp"
#include "netseg/metrics.hpp"
#include "netseg/morphology.hpp"
#include "netseg/nifti.hpp"
#include "netseg/nn/network.hpp"
#include "netseg/nn/ops.hpp"
#include "netseg/nn/train.hpp"
#include "netseg/phantom.hpp"
#include "netseg/stats.hpp"
#include "oracles.hpp"

using namespace netseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool within_time(double seconds, double limit, std::string& detail) {
  if (seconds <= limit) return true;
  detail += fmt("; took %.1f s, limit %.0f s", seconds, limit);
  return false;
}

// 1 -------------------------------------------------------------------------
Outcome metrics_oracle() {
  std::mt19937_64 rng(1001);
  std::size_t mismatches = 0, distance_pairs = 0, empty_pairs = 0;
  double worst_hd = 0;
  std::uniform_real_distribution<double> spacing(0.5, 2.0), density(0.02, 0.6);
  for (int t = 0; t < 1000; ++t) {
    const Shape3 s = oracle::random_shape(rng, 8);
    const Spacing3 sp{spacing(rng), spacing(rng), spacing(rng)};
    const Mask a = oracle::random_mask(rng, s, density(rng));
    const Mask b = oracle::random_mask(rng, s, density(rng));
    mismatches += dice(a, b) != oracle::dice(a, b);
    mismatches += iou(a, b) != oracle::iou(a, b);
    if (oracle::count(a) == 0 || oracle::count(b) == 0) {
      ++empty_pairs;
      try {
        (void)hausdorff(a, b, sp);
        ++mismatches;
      } catch (const Error& e) {
        mismatches += e.code() != ErrorCode::EmptyMask;
      }
      continue;
    }
    ++distance_pairs;
    for (double pct : {100.0, 95.0}) {
      const double d = std::abs(hausdorff(a, b, sp, pct) - oracle::hausdorff(a, b, sp, pct));
      worst_hd = std::max(worst_hd, d);
      mismatches += d > 1e-12;
    }
  }
  return {mismatches == 0, fmt("1000 pairs (%zu with distances, %zu with an empty mask), %zu mismatches, worst HD error %.1e",
                               distance_pairs, empty_pairs, mismatches, worst_hd)};
}

// 2 -------------------------------------------------------------------------
Outcome gradient_checks() {
  using namespace netseg::nn;
  std::mt19937_64 rng(1002);
  std::map<std::string, double> err;
  Tensor x = oracle::random_tensor(rng, {2, 3, 4, 6, 5});
  Tensor y = oracle::random_tensor(rng, {2, 3, 4, 6, 5});
  Tensor w = oracle::random_tensor(rng, {4, 3, 3, 3, 3});
  Tensor w1 = oracle::random_tensor(rng, {4, 3, 1, 1, 1});
  Tensor wt = oracle::random_tensor(rng, {3, 2, 3, 3, 3});
  Tensor g = oracle::random_tensor(rng, {3}), b = oracle::random_tensor(rng, {3});
  err["conv3x3"] = oracle::gradient_error([&] { return conv3d(x, w, 1); }, {x, w}, rng);
  err["conv3x3_stride2"] = oracle::gradient_error([&] { return conv3d(x, w, 2); }, {x, w}, rng);
  err["conv1x1"] = oracle::gradient_error([&] { return conv3d(x, w1, 1); }, {x, w1}, rng);
  err["conv_transpose"] = oracle::gradient_error([&] { return conv3d_transpose(x, wt); }, {x, wt}, rng);
  err["group_norm"] = oracle::gradient_error([&] { return group_norm(x, 3, g, b); }, {x, g, b}, rng);
  err["channel_bias"] = oracle::gradient_error([&] { return add_channel_bias(x, g); }, {x, g}, rng);
  err["sigmoid"] = oracle::gradient_error([&] { return sigmoid(x); }, {x}, rng);
  err["add"] = oracle::gradient_error([&] { return add(x, y); }, {x, y}, rng);
  err["dropout"] = oracle::gradient_error([&] { return spatial_dropout(x, 0.3, true, 5); }, {x}, rng);
  err["sum"] = oracle::gradient_error([&] { return sum(x); }, {x}, rng);
  Tensor xr = x;
  for (auto& v : xr.values())
    if (std::abs(v) < 1e-3) v = 0.5;  // keep probes off the kink
  err["relu"] = oracle::gradient_error([&] { return relu(xr); }, {xr}, rng);
  Tensor p = oracle::random_tensor(rng, {2, 3, 2, 3, 3});
  for (auto& v : p.values()) v = 1.0 / (1.0 + std::exp(-v));
  std::vector<double> tgt(p.numel());
  std::bernoulli_distribution coin(0.4);
  for (auto& v : tgt) v = coin(rng);
  err["soft_dice"] = oracle::gradient_error([&] { return soft_dice_loss(p, tgt); }, {p}, rng);

  NetworkConfig nc;
  nc.levels = 2;
  nc.base_filters = 4;
  nc.norm_groups = 2;
  nc.dropout_rate = 0.2;
  nc.upscaling_head = true;
  nc.init_seed = 4;
  Network net(nc);
  Tensor in = oracle::random_tensor(rng, {1, 4, 8, 16, 16});
  std::vector<Tensor> inputs{in};
  for (auto& prm : net.parameters()) inputs.push_back(prm.tensor);
  err["network_2level_upscaling"] = oracle::gradient_error([&] { return net.forward(in, true, 11); }, inputs, rng, 8);

  double worst = 0;
  std::string detail;
  for (const auto& [name, e] : err) {
    worst = std::max(worst, e);
    detail += fmt("%s %.1e, ", name.c_str(), e);
  }
  return {worst < 1e-4, fmt("worst relative error %.2e (limit 1e-4): ", worst) + detail.substr(0, detail.size() - 2)};
}

// 3 -------------------------------------------------------------------------
Outcome shape_contract() {
  nn::NetworkConfig c;  // 4 levels, 32 base filters, upscaling head
  c.levels = 4;
  c.out_segments = 3;
  const nn::Network full(c);
  const Shape3 declared = full.output_shape({16, 32, 32});
  // a forward pass on the same topology with narrower layers
  c.base_filters = 8;
  nn::Network net(c);
  std::mt19937_64 rng(1003);
  const nn::Tensor x = oracle::random_tensor(rng, {1, 4, 16, 32, 32}, false);
  nn::NoGradGuard ng;
  const nn::Tensor y = net.forward(x);
  const bool ok = declared == Shape3{32, 64, 64} && y.shape() == nn::TensorShape{1, 3, 32, 64, 64};
  return {ok, "4x16x32x32 -> " + nn::to_string(y.shape()) + ", declared " + to_string(declared) + " for 32 base filters"};
}

// 4 -------------------------------------------------------------------------
Outcome phantom_training() {
  CohortSpec cs;
  cs.n = 20;
  cs.seed = 7;
  cs.base.gain_jitter = 0.05;
  const auto recs = generate_cohort(cs);
  const auto segs = schema_segments(Schema::Unified4Label);
  std::vector<nn::Sample> train_set, test_set;
  for (std::size_t i = 0; i < recs.size(); ++i) (i < 16 ? train_set : test_set).push_back(make_sample(recs[i], segs, 2));

  nn::NetworkConfig nc;
  nc.levels = 3;
  nc.base_filters = 8;
  nc.out_segments = segs.size();
  nc.norm_groups = 4;
  nc.dropout_rate = 0.1;
  nc.init_seed = 1;
  nn::Network net(nc);
  nn::TrainConfig tc;
  tc.lr0 = 1e-3;
  tc.epochs = 20;
  tc.patch = Shape3{16, 32, 32};
  tc.patches_per_sample = 2;
  tc.seed = 3;
  nn::train(net, train_set, tc);

  // held-out Dice per record from thresholded predictions, averaged over records
  std::map<Segment, double> mean;
  for (const auto& s : test_set) {
    const auto prob = nn::predict(net, s);
    const std::size_t n = s.target_shape.size();
    for (std::size_t k = 0; k < segs.size(); ++k) {
      Mask p(s.target_shape), t(s.target_shape);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = prob[k * n + i] >= 0.5;
        t[i] = s.target[k * n + i] > 0.5;
      }
      mean[segs[k]] += oracle::dice(p, t) / static_cast<double>(test_set.size());
    }
  }
  const double core = (mean[Segment::ET] + mean[Segment::TC] + mean[Segment::WT]) / 3.0;
  return {core >= 0.80 && mean[Segment::NET] >= 0.5,
          fmt("%zu parameters, 20 epochs; held-out Dice ET %.3f TC %.3f WT %.3f (mean %.3f, need 0.80) NET %.3f (need 0.5)",
              net.parameter_count(), mean[Segment::ET], mean[Segment::TC], mean[Segment::WT], core, mean[Segment::NET])};
}

// 5 -------------------------------------------------------------------------
Outcome oracle_extraction() {
  CohortSpec cs;
  cs.n = 20;
  cs.seed = 7;
  std::mt19937_64 rng(1005);
  double pre_min = 1, post_min = 1, noisy_min = 1, noisy_mean = 0;
  for (const auto& spec : cohort_specs(cs)) {
    const LabelVolume truth = generate_labels(spec);
    const auto segs = compose_segments(truth);
    const Mask& net_true = segs.at(Segment::NET);
    const LabelVolume fused = fuse_to_schema(truth, Schema::Brats2018);
    ExtractionConfig raw;
    raw.filters.clear();
    const ExtractionConfig filtered;
    pre_min = std::min(pre_min, oracle::dice(extract_net(fused, segs.at(Segment::TC), segs.at(Segment::ET), raw).net_mask, net_true));
    post_min = std::min(post_min, oracle::dice(extract_net(fused, segs.at(Segment::TC), segs.at(Segment::ET), filtered).net_mask, net_true));

    // salt: 5% of the fused voxel count, scattered over non-core voxels and added to the fused label
    LabelVolume noisy = fused;
    std::size_t fused_count = 0;
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < fused.size(); ++i) {
      fused_count += fused[i] == 1;
      if (fused[i] == 0 || fused[i] == 2) free.push_back(i);
    }
    std::shuffle(free.begin(), free.end(), rng);
    const std::size_t salt = (fused_count * 5 + 99) / 100;
    for (std::size_t i = 0; i < salt; ++i) noisy[free[i]] = 1;
    const double d = oracle::dice(extract_net(noisy, segs.at(Segment::TC), segs.at(Segment::ET), filtered).net_mask, net_true);
    noisy_min = std::min(noisy_min, d);
    noisy_mean += d / static_cast<double>(cs.n);
  }
  return {pre_min == 1.0 && post_min >= 0.95 && noisy_min >= 0.90,
          fmt("20 phantoms; min NET Dice pre-filter %.4f, post-filter %.4f, with 5%% salt %.4f (mean %.4f)", pre_min,
              post_min, noisy_min, noisy_mean)};
}

// 6 -------------------------------------------------------------------------
Outcome volume_grouping() {
  std::size_t misassigned = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(2000 + seed);
    std::uniform_int_distribution<std::size_t> low(0, 60);
    std::normal_distribution<double> mid(5000, 400), high(90000, 6000);
    std::map<std::string, std::size_t> vol;
    std::map<std::string, VolumeGroup> planted;
    for (int i = 0; i < 15; ++i) {
      const std::string a = fmt("l%02d", i), b = fmt("m%02d", i), c = fmt("h%02d", i);
      vol[a] = low(rng);
      vol[b] = static_cast<std::size_t>(mid(rng));
      vol[c] = static_cast<std::size_t>(high(rng));
      planted[a] = VolumeGroup::Low;
      planted[b] = VolumeGroup::Medium;
      planted[c] = VolumeGroup::High;
    }
    const auto p = partition_by_volume(vol, seed);
    for (const auto& [id, g] : planted) misassigned += p.groups.at(id) != g;
  }
  return {misassigned == 0, fmt("10 seeds x 45 records, %zu misassignments", misassigned)};
}

// 7 -------------------------------------------------------------------------
Outcome gamma_recovery() {
  std::mt19937_64 rng(1007);
  std::gamma_distribution<double> g(2.0, 3.0);
  std::vector<double> x(100000);
  for (auto& v : x) v = g(rng);
  const GammaFit f = fit_gamma(x);
  const double ek = std::abs(f.shape_k - 2.0) / 2.0, et = std::abs(f.scale_theta - 3.0) / 3.0;

  CohortSpec cs;
  cs.n = 200;
  cs.seed = 17;
  std::vector<double> volumes;
  for (const auto& spec : cohort_specs(cs)) {
    const double n = static_cast<double>(count_label_voxels(generate_labels(spec))[3]);
    if (n > 0) volumes.push_back(n);
  }
  const GammaFit cf = fit_gamma(volumes);
  const auto ks = ks_test_gamma(volumes, cf.shape_k, cf.scale_theta);
  return {ek < 0.02 && et < 0.02 && ks.p_value > 0.01,
          fmt("k %.4f (err %.2f%%), theta %.4f (err %.2f%%); cohort of %zu NET volumes: k %.3f theta %.1f, KS D %.4f p %.3f",
              f.shape_k, 100 * ek, f.scale_theta, 100 * et, volumes.size(), cf.shape_k, cf.scale_theta, ks.statistic, ks.p_value)};
}

// 8 -------------------------------------------------------------------------
double pooled_t(const std::vector<double>& a, const std::vector<double>& b) {
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  const double ma = mean(a), mb = mean(b);
  double ss = 0;
  for (double v : a) ss += (v - ma) * (v - ma);
  for (double v : b) ss += (v - mb) * (v - mb);
  const double sp2 = ss / (a.size() + b.size() - 2.0);
  return (ma - mb) / std::sqrt(sp2 * (1.0 / a.size() + 1.0 / b.size()));
}

Outcome anova_tukey() {
  const auto ex = anova_oneway({{1, 2, 3}, {2, 3, 4}, {3, 4, 5}});
  const bool example = std::abs(ex.f_statistic - 3.0) < 1e-12 && ex.df_between == 2 && ex.df_within == 6 &&
                       std::abs(ex.p_value - 0.125) < 1e-10;

  std::mt19937_64 rng(1008);
  std::normal_distribution<double> n(0, 1);
  int agree = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a, b;
    for (int i = 0; i < 5 + t % 6; ++i) a.push_back(n(rng));
    for (int i = 0; i < 4 + t % 5; ++i) b.push_back(n(rng) + 0.2 * (t % 9));
    const double df = a.size() + b.size() - 2.0;
    const boost::math::students_t st(df);
    const double p = 2.0 * boost::math::cdf(boost::math::complement(st, std::abs(pooled_t(a, b))));
    agree += tukey_hsd({a, b}).pairs.at(0).significant == (p < 0.05);
  }

  CohortSpec cs;
  cs.n = 20;
  cs.seed = 7;
  cs.base.gain_jitter = 0.05;
  std::vector<MultiModalRecord> recs;
  for (const auto& r : generate_cohort(cs)) recs.push_back(normalize_record(r));
  const auto analyses = analyze_intensities(intensity_by_region(recs));
  bool separable = true;
  std::string detail;
  for (const auto& a : analyses) {
    if (a.modality != Modality::T1C && a.modality != Modality::Flair) continue;
    std::size_t net_pairs = 0, net_sig = 0;
    for (const auto& pr : a.tukey.pairs) {
      const bool has_net = a.regions.at(pr.group_a) == Region::NET || a.regions.at(pr.group_b) == Region::NET;
      net_pairs += has_net;
      net_sig += has_net && pr.significant;
    }
    separable = separable && a.anova.p_value < 0.01 && net_pairs == 3 && net_sig == net_pairs;
    detail += fmt("; %s F %.1f p %.1e, NET differs from %zu/%zu regions", std::string(to_string(a.modality)).c_str(),
                  a.anova.f_statistic, a.anova.p_value, net_sig, net_pairs);
  }
  return {example && agree == 100 && separable,
          fmt("example F %.15g (df %zu, %zu) p %.6g; Tukey agrees with t-test on %d/100", ex.f_statistic, ex.df_between,
              ex.df_within, ex.p_value, agree) +
              detail};
}

// 9 -------------------------------------------------------------------------
Outcome morphology_laws() {
  std::mt19937_64 rng(1009);
  std::uniform_real_distribution<double> density(0.1, 0.7);
  std::size_t violations = 0;
  const int conns[] = {6, 18, 26};
  for (int t = 0; t < 500; ++t) {
    const Shape3 s = oracle::random_shape(rng, 9);
    const Mask a = oracle::random_mask(rng, s, density(rng));
    Mask b = oracle::random_mask(rng, s, 0.3);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = b[i] || a[i];
    const int r = 1 + t % 2;
    const auto se = StructuringElement::ball(conns[t % 3], r);
    auto check = [&](bool ok) { violations += !ok; };
    const Mask op = open(a, se), cl = close(a, se);
    check(open(op, se) == op);
    check(close(cl, se) == cl);
    check(oracle::subset(erode(a, se), a));
    check(oracle::subset(op, a));
    check(oracle::subset(a, dilate(a, se)));
    // the grid exterior is background, so closing is extensive for masks at least r voxels from the border
    Mask inner = a;
    for (std::size_t i = 0; i < s.d; ++i)
      for (std::size_t j = 0; j < s.h; ++j)
        for (std::size_t k = 0; k < s.w; ++k)
          if (std::min({i, j, k, s.d - 1 - i, s.h - 1 - j, s.w - 1 - k}) < static_cast<std::size_t>(r)) inner(i, j, k) = 0;
    check(oracle::subset(inner, close(inner, se)));
    check(oracle::subset(erode(a, se), erode(b, se)));
    check(oracle::subset(dilate(a, se), dilate(b, se)));
    check(oracle::subset(op, open(b, se)));
    check(oracle::subset(cl, close(b, se)));
    // duality, compared where the structuring element stays inside the grid
    const Mask lhs = erode(a, se), rhs = oracle::complement(dilate(oracle::complement(a), se));
    for (std::size_t i = r; i + r < s.d; ++i)
      for (std::size_t j = r; j + r < s.h; ++j)
        for (std::size_t k = r; k + r < s.w; ++k) check(lhs(i, j, k) == rhs(i, j, k));
  }
  return {violations == 0, fmt("500 masks, balls of connectivity 6/18/26 and radius 1/2, %zu violations", violations)};
}

// 10 ------------------------------------------------------------------------
Outcome nifti_io() {
  std::mt19937_64 rng(1010);
  oracle::TempDir dir("accept_nifti");
  std::size_t mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const Shape3 s = oracle::random_shape(rng, 12);
    const Spacing3 sp{0.25 * (1 + t % 8), 1.0 + 0.5 * (t % 3), 1.5};
    Volume f(s, 0.0f, sp), i16(s, 0.0f, sp);
    LabelVolume lab(s, Schema::Unified4Label, sp);
    std::normal_distribution<float> n(0.0f, 500.0f);
    std::uniform_int_distribution<int> si(-32768, 32767), li(0, 4);
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i] = n(rng);
      i16[i] = static_cast<float>(si(rng));
      lab[i] = static_cast<std::uint8_t>(li(rng));
    }
    const std::string ext = t % 4 == 3 ? ".nii.gz" : ".nii";
    write_volume(f, dir.path / ("f" + ext));
    write_volume(i16, dir.path / ("i" + ext), DataType::Int16);
    write_labels(lab, dir.path / ("l" + ext));
    mismatches += !(read_volume(dir.path / ("f" + ext)) == f);
    mismatches += !(read_volume(dir.path / ("i" + ext)) == i16);
    mismatches += !(read_labels(dir.path / ("l" + ext), Schema::Unified4Label) == lab);
  }

  const auto base = encode_nifti(Grid<double>(Shape3{4, 5, 6}, 2.0), DataType::Int16);
  std::uniform_int_distribution<std::size_t> pos(0, base.size() - 1), hpos(0, 351);
  std::uniform_int_distribution<int> byte(0, 255);
  std::size_t cases = 0, rejected = 0, foreign = 0;
  auto probe = [&](const std::vector<std::uint8_t>& b) {
    ++cases;
    try {
      (void)decode_nifti(b);
    } catch (const Error&) {
      ++rejected;
    } catch (...) {
      ++foreign;
    }
  };
  for (int t = 0; t < 600; ++t) {
    auto b = base;
    for (int f = 0; f <= t % 10; ++f) b[hpos(rng)] = static_cast<std::uint8_t>(byte(rng));
    probe(b);
  }
  for (int t = 0; t < 200; ++t) {
    auto b = base;
    b.resize(pos(rng));
    probe(b);
  }
  for (int t = 0; t < 200; ++t) {
    std::vector<std::uint8_t> b(1 + pos(rng));
    for (auto& v : b) v = static_cast<std::uint8_t>(byte(rng));
    probe(b);
  }
  // targeted fields: dims, datatype, bitpix, vox_offset, sizeof_hdr
  for (std::size_t off : {0, 40, 42, 44, 46, 70, 72, 108})
    for (int v : {-1, 0, 1, 7, 255, 32767, -32768}) {
      auto b = base;
      const auto x = static_cast<std::int16_t>(v);
      std::memcpy(b.data() + off, &x, 2);
      probe(b);
    }
  return {mismatches == 0 && cases >= 1000 && foreign == 0 && rejected > 0,
          fmt("100 volumes x 3 datatypes, %zu mismatches; fuzz %zu cases, %zu rejected with a codec error, %zu other failures",
              mismatches, cases, rejected, foreign)};
}

// 11 ------------------------------------------------------------------------
std::map<std::string, std::string> file_tree(const fs::path& root) {
  std::map<std::string, std::string> t;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      t[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    }
  return t;
}

Outcome pipeline_determinism() {
  oracle::TempDir dir("accept_pipeline");
  auto run = [&](const std::string& name, const std::string& jobs, std::string& stdout_text) {
    std::ostringstream out, err;
    const int code = cli::run({"pipeline", "--out", (dir.path / name).string(), "--seed", "5", "--jobs", jobs, "--n", "10",
                               "--shape", "16", "32", "32", "--holdout", "2", "--epochs", "3", "--levels", "2",
                               "--base-filters", "4", "--norm-groups", "2", "--patch", "8", "16", "16",
                               "--patches-per-sample", "1", "--unified-patches-per-sample", "1"},
                              out, err);
    stdout_text = out.str();
    if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
    return code;
  };
  std::string out_a, out_b;
  const int ca = run("a", "1", out_a), cb = run("b", "2", out_b);
  if (ca != 0 || cb != 0) return {false, fmt("pipeline exit codes %d and %d", ca, cb)};
  const auto ta = file_tree(dir.path / "a"), tb = file_tree(dir.path / "b");
  std::size_t differing = 0, bytes = 0;
  for (const auto& [path, data] : ta) {
    bytes += data.size();
    auto it = tb.find(path);
    differing += it == tb.end() || it->second != data;
  }
  differing += tb.size() - std::min(tb.size(), ta.size());
  return {differing == 0 && ta.size() == tb.size() && out_a == out_b,
          fmt("two runs (1 and 2 jobs), %zu artifacts, %zu bytes, %zu differing, summaries %s", ta.size(), bytes, differing,
              out_a == out_b ? "identical" : "different")};
}

// 12 ------------------------------------------------------------------------
Outcome parameter_report() {
  nn::NetworkConfig c;
  c.out_segments = 3;
  c.upscaling_head = true;
  std::string detail;
  const std::pair<std::size_t, double> rows[] = {{5, 13.15e6}, {4, 2.87e6}};
  for (auto [levels, reference] : rows) {
    c.levels = levels;
    const double n = static_cast<double>(nn::count_parameters(c));
    detail += fmt("%s%zu-level: %.0f (%.2fM) vs reference %.2fM, delta %+.2fM (%+.1f%%)", detail.empty() ? "" : "; ",
                  levels, n, n / 1e6, reference / 1e6, (n - reference) / 1e6, 100.0 * (n - reference) / reference);
  }
  detail += " [base 32 filters doubling per level, upscaling head]";
  c.base_filters = 16;
  for (auto [levels, reference] : rows) {
    c.levels = levels;
    const double n = static_cast<double>(nn::count_parameters(c));
    detail += fmt("; base 16 %zu-level: %.2fM (%+.1f%%)", levels, n / 1e6, 100.0 * (n - reference) / reference);
  }
  return {true, detail};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;  // 0: no limit
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "metrics oracle equivalence", 10, metrics_oracle},
      {2, "gradient checks", 120, gradient_checks},
      {3, "upscaling shape contract", 0, shape_contract},
      {4, "phantom training Dice", 900, phantom_training},
      {5, "NET extraction with oracle predictions", 60, oracle_extraction},
      {6, "volume grouping", 10, volume_grouping},
      {7, "gamma fit recovery", 30, gamma_recovery},
      {8, "ANOVA and Tukey HSD", 30, anova_tukey},
      {9, "morphology laws", 30, morphology_laws},
      {10, "NIfTI round trip and fuzzing", 60, nifti_io},
      {11, "pipeline determinism", 0, pipeline_determinism},
      {12, "parameter count report", 0, parameter_report},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_seconds > 0 && !within_time(secs, c.limit_seconds, o.detail)) o.pass = false;
    std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
