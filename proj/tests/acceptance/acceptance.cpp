// Acceptance suite AC1..AC9. Prints one [PASS]/[FAIL] line per criterion and
// exits nonzero if any fail. Pass criterion names (e.g. AC5) to run a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "woundseg/cli/app.hpp"

using namespace woundseg;
namespace fs = std::filesystem;
using testing_support::TensorD;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- AC1 ----------------------------------------------------------------------------

Outcome ac1_gradients() {
  using testing_support::gradcheck;
  using In = std::vector<TensorD>;
  const auto t0 = Clock::now();
  Rng rng(101);
  std::map<std::string, double> worst;
  std::map<std::string, int> shapes;
  auto record = [&](const std::string& op, const testing_support::GradcheckResult& r) {
    worst[op] = std::max(worst[op], r.max_rel_error);
    ++shapes[op];
  };
  const std::vector<ad::Shape> s4 = {{1, 1, 4, 4}, {2, 3, 2, 6}, {1, 2, 6, 4}, {3, 1, 2, 2}, {2, 2, 4, 8}, {1, 4, 8, 6}};

  struct ConvCase {
    ad::Shape in;
    int cout, k;
  };
  const std::vector<ConvCase> conv = {{{1, 1, 5, 5}, 1, 3}, {{2, 3, 4, 6}, 2, 3}, {{1, 2, 7, 5}, 3, 1},
                                      {{2, 1, 6, 6}, 2, 5}, {{1, 3, 3, 3}, 4, 3}, {{1, 4, 8, 8}, 2, 3}};
  std::uint64_t seed = 1;
  for (const auto& c : conv) {
    const In in{testing_support::random_tensor(c.in, rng), testing_support::random_tensor({c.cout, c.in[1], c.k, c.k}, rng),
                testing_support::random_tensor({c.cout}, rng)};
    record("conv2d", gradcheck([](const In& x) { return ad::conv2d(x[0], x[1], &x[2]); }, in, seed++));
  }
  for (const auto& s : s4) {
    record("max_pool2",
           gradcheck([](const In& x) { return ad::max_pool2(x[0]); }, {testing_support::random_distinct_tensor(s, rng)}, seed++));
    record("upsample2",
           gradcheck([](const In& x) { return ad::upsample2(x[0]); }, {testing_support::random_tensor(s, rng)}, seed++));
    const In nz{testing_support::random_tensor_avoiding_zero(s, rng)};
    record("leaky_relu", gradcheck([](const In& x) { return ad::leaky_relu(x[0], 0.01); }, nz, seed++));
    record("relu", gradcheck([](const In& x) { return ad::relu(x[0]); }, nz, seed++));
    record("sigmoid", gradcheck([](const In& x) { return ad::sigmoid(ad::scale(x[0], 3.0)); }, nz, seed++));
    ad::Shape other = s;
    other[1] += 1;
    record("concat_channels",
           gradcheck([](const In& x) { return ad::concat_channels(x[0], x[1]); },
                     {testing_support::random_tensor(s, rng), testing_support::random_tensor(other, rng)}, seed++));
    const auto t = testing_support::binary_targets(s, rng);
    record("bce_with_logits", gradcheck([t](const In& x) { return ad::bce_with_logits(x[0], t); },
                                        {testing_support::random_tensor(s, rng, -3, 3)}, seed++));
    record("dice_loss", gradcheck([t](const In& x) { return ad::dice_loss(x[0], t); },
                                  {testing_support::random_tensor(s, rng, 0.05, 0.95)}, seed++));
  }
  const double elapsed = seconds_since(t0);
  bool ok = elapsed < 60.0;
  std::ostringstream os;
  for (const auto& [op, err] : worst) {
    ok = ok && err < 1e-4 && shapes[op] >= 5;
    os << op << " " << fmt("%.1e", err) << " (" << shapes[op] << " shapes); ";
  }
  os << fmt("%.1f s", elapsed);
  return {ok, os.str()};
}

// ---- AC2 ----------------------------------------------------------------------------

Outcome ac2_metrics() {
  Rng rng(202);
  std::vector<std::pair<BinaryMask, BinaryMask>> pairs;
  const BinaryMask empty(16, 16), full(16, 16, true);
  const auto blob = testing_support::disk_mask(16, 16, 5, 5, 3);
  const auto other = testing_support::disk_mask(16, 16, 12, 12, 2);
  pairs.push_back({empty, empty});
  pairs.push_back({blob, empty});
  pairs.push_back({empty, blob});
  pairs.push_back({blob, blob});
  pairs.push_back({blob, other});
  pairs.push_back({full, full});
  pairs.push_back({full, blob});
  pairs.push_back({blob, full});
  while (pairs.size() < 100) {
    const double pp = uniform01(rng), pg = uniform01(rng);
    pairs.push_back({testing_support::random_mask(16, 16, pp, rng), testing_support::random_mask(16, 16, pg, rng)});
  }
  int mismatches = 0;
  for (const auto& [pred, gt] : pairs) {
    const auto m = metrics::scores(metrics::confusion(pred, gt));
    const auto o = testing_support::brute_force_scores(pred, gt);
    const bool same = m.counts.tp == o.tp && m.counts.fp == o.fp && m.counts.fn == o.fn && m.counts.tn == o.tn &&
                      m.dice == o.dice && m.precision == o.precision && m.recall == o.recall;
    mismatches += !same;
  }
  return {mismatches == 0, std::to_string(pairs.size()) + " pairs (8 degenerate), " + std::to_string(mismatches) +
                               " mismatches"};
}

// ---- AC3 ----------------------------------------------------------------------------

Outcome ac3_schedule() {
  const train::TrainConfig cfg;
  int bad = 0;
  for (int e = 0; e <= 40; ++e)
    if (train::lr_at_epoch(cfg, e) != 1e-3 * std::pow(0.1, static_cast<double>(e / 10))) ++bad;
  return {bad == 0, "epochs 0..40, " + std::to_string(bad) + " mismatches"};
}

// ---- AC4 ----------------------------------------------------------------------------

Outcome ac4_morphology() {
  double worst = 0.0;
  bool partition = true;
  for (int r = 8; r <= 40; ++r) {
    const auto m = testing_support::disk_mask(100, 100, 49.5, 49.5, r);
    for (double f : {0.5, 0.75, 1.2})
      worst = std::max(worst, std::abs(morphology::scale_mask_to_fraction(m, f).achieved - f));
    const auto rs = morphology::build_regions(m);
    const auto& g = rs.regions;
    partition = partition && mask_or(mask_or(g[0], g[1]), g[2]) == m && !mask_and(g[0], g[1]).any() &&
                !mask_and(g[1], g[2]).any() && !mask_and(g[0], g[2]).any() && !mask_and(g[3], m).any();
  }
  Rng rng(404);
  int order_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto m = testing_support::random_mask(16 + static_cast<int>(uniform_index(rng, 17)),
                                                16 + static_cast<int>(uniform_index(rng, 17)), uniform01(rng), rng);
    if (!(is_subset(morphology::erode(m), m) && is_subset(m, morphology::dilate(m)))) ++order_failures;
    if (m.any()) {
      const auto rs = morphology::build_regions(m);
      const auto& g = rs.regions;
      partition = partition && mask_or(mask_or(g[0], g[1]), g[2]) == m &&
                  g[0].count() + g[1].count() + g[2].count() == m.count() && !mask_and(g[3], m).any();
    }
  }
  const bool ok = worst <= 0.05 && order_failures == 0 && partition;
  return {ok, "max |achieved-target| " + fmt("%.4f", worst) + " over radii 8..40; " + std::to_string(order_failures) +
                  "/1000 ordering failures; partition " + (partition ? "exact" : "broken")};
}

// ---- AC5 ----------------------------------------------------------------------------

Outcome ac5_training() {
  const auto t0 = Clock::now();
  testing_support::TempDir dir("ac5");
  const config::RunConfig cfg;  // 20 patients x 1 scan x 10 frames, 96x96, splits 0.8/0.2/0
  const auto gen = phantom::generate_dataset(config::dataset_spec(cfg), dir.path());
  const auto train_set = train::load_samples(gen.manifest, Split::train);
  const auto val_set = train::load_samples(gen.manifest, Split::val);
  std::set<std::string> train_patients, val_patients;
  for (const auto& s : train_set) train_patients.insert(s.id.substr(0, s.id.find('/')));
  for (const auto& s : val_set) val_patients.insert(s.id.substr(0, s.id.find('/')));
  bool disjoint = true;
  for (const auto& p : val_patients) disjoint = disjoint && !train_patients.count(p);

  const auto tc = config::trainer_config(cfg);
  auto params = unet::build<float>(cfg.model, config::stage_seed(cfg, config::Stage::model_init));
  const auto r = train::train_on_samples<float>(std::move(params), train_set, val_set, tc, cfg.augment,
                                                [](const train::EpochRecord& e) {
                                                  std::fprintf(stderr, "  AC5 epoch %2d loss %.5f val_dice %.4f\n",
                                                               e.epoch, e.train_loss, e.val_dice);
                                                });
  const double elapsed = seconds_since(t0);
  const bool ok = train_set.size() == 160 && val_set.size() == 40 && disjoint && r.best_val_dice >= 0.80 &&
                  elapsed <= 1800.0 && r.history.size() <= 40;
  return {ok, std::to_string(train_set.size()) + "/" + std::to_string(val_set.size()) + " frames, best val Dice " +
                  fmt("%.4f", r.best_val_dice) + " at epoch " + std::to_string(r.best_epoch) + " of " +
                  std::to_string(r.history.size()) + ", " + fmt("%.0f s", elapsed)};
}

// ---- AC6 ----------------------------------------------------------------------------

Outcome ac6_intensity() {
  testing_support::TempDir dir("ac6");
  phantom::DatasetSpec ds;
  ds.n_patients = 20;
  ds.frames_per_scan = 5;
  ds.split_fractions = {1.0, 0.0, 0.0};
  ds.seed = 606;
  const auto gen = phantom::generate_dataset(ds, dir.path());
  std::map<std::string, std::vector<morphology::IntensityReport>> by_scan;
  for (const auto& ref : frames_in_split(gen.manifest, std::nullopt)) {
    const auto pair = load_pair(ref.image, ref.mask);
    by_scan[ref.scan_key].push_back(morphology::intensity_ratios(pair.frame, morphology::build_regions(pair.mask)));
  }
  std::vector<morphology::ScanIntensity> scans;
  for (const auto& [key, reps] : by_scan) scans.push_back(morphology::average_scan(key, reps));
  const auto sum = morphology::summarize_scans(scans);
  std::array<double, 4> m{};
  bool present = true;
  for (int i = 0; i < 4; ++i) {
    present = present && sum[i].ratio.has_value();
    if (sum[i].ratio) m[i] = sum[i].ratio->mean;
  }
  const bool ordered = present && m[0] < m[1] && m[1] < m[2] && m[2] < m[3] && m[0] < 1.0 && m[3] > 1.0;

  // Uniform phantoms: flat layers, no speckle, neutral wound multiplier.
  Rng rng(607);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    phantom::PhantomSpec s;
    s.speckle_sigma = 0.0;
    s.background = 0.5;
    s.layers = {{0, s.height, 0.5}};
    phantom::WoundSpec w;
    w.a = uniform(rng, 10, 20);
    w.b = uniform(rng, 6, 12);
    w.cx = 48 + uniform(rng, -10, 10);
    w.cy = 48 + uniform(rng, -10, 10);
    w.perturbation = uniform(rng, 0.0, 0.15);
    w.center_darkening = 1.0;
    w.rim_brightening = 1.0;
    s.wound = w;
    const auto p = phantom::generate_phantom(s, static_cast<std::uint64_t>(i));
    const auto rep = morphology::intensity_ratios(p.frame, morphology::build_regions(p.mask));
    for (const auto& reg : rep.regions) worst = std::max(worst, reg.ratio ? std::abs(*reg.ratio - 1.0) : 1.0);
  }
  std::ostringstream os;
  os << scans.size() << " scans: core " << fmt("%.3f", m[0]) << " < mid " << fmt("%.3f", m[1]) << " < rim "
     << fmt("%.3f", m[2]) << " < halo " << fmt("%.3f", m[3]) << "; uniform max |ratio-1| " << fmt("%.1e", worst);
  return {ordered && scans.size() == 20 && worst <= 1e-6, os.str()};
}

// ---- AC7 ----------------------------------------------------------------------------

Outcome ac7_overlay() {
  Rng rng(707);
  int bad = 0;
  for (int i = 0; i < 50; ++i) {
    const int w = 8 + static_cast<int>(uniform_index(rng, 40)), h = 8 + static_cast<int>(uniform_index(rng, 40));
    const auto frame = testing_support::random_frame(w, h, rng);
    const auto pred = testing_support::random_mask(w, h, uniform01(rng), rng);
    const auto gt = testing_support::random_mask(w, h, uniform01(rng), rng);
    const auto expected = metrics::confusion(pred, gt);
    const auto layer = viz::overlay_layer(pred, gt);
    const auto out = viz::render_overlay(frame, pred, gt, 0.5);
    // Count colors in the composite by matching each pixel against the blend
    // of its gray level with each category color.
    metrics::ConfusionCounts seen;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::uint8_t g = viz::gray_level(frame.at(x, y));
        const std::uint8_t* p = out.at(x, y);
        auto is = [&](const viz::Rgb& c) {
          return p[0] == viz::blend(g, c.r, 0.5) && p[1] == viz::blend(g, c.g, 0.5) && p[2] == viz::blend(g, c.b, 0.5);
        };
        const bool tn = p[0] == g && p[1] == g && p[2] == g && layer.at(x, y)[3] == 0;
        const auto cat = viz::categorize(pred.at(x, y), gt.at(x, y));
        if (tn && cat == viz::Category::tn) ++seen.tn;
        else if (cat == viz::Category::tp && is(viz::kTruePositive)) ++seen.tp;
        else if (cat == viz::Category::fp && is(viz::kFalsePositive)) ++seen.fp;
        else if (cat == viz::Category::fn && is(viz::kFalseNegative)) ++seen.fn;
      }
    if (!(viz::count_layer_colors(layer) == expected && seen == expected)) ++bad;
  }
  return {bad == 0, "50 random pairs, " + std::to_string(bad) + " count mismatches"};
}

// ---- AC8 ----------------------------------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "woundseg");
  args.push_back("--quiet");
  args.push_back("--threads");
  args.push_back("1");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

// Runs inside `root` with relative paths so the two runs see identical arguments.
bool pipeline(const fs::path& root) {
  const auto cwd = fs::current_path();
  fs::current_path(root);
  const auto s = [](const char* sub) { return std::string(sub); };
  const std::vector<std::string> common = {"--seed", "8",
                                           "--set", "phantom.width=48",
                                           "--set", "phantom.height=48",
                                           "--set", "phantom.patients=6",
                                           "--set", "phantom.frames_per_scan=3",
                                           "--set", "phantom.semi_axis_a=[8, 12]",
                                           "--set", "phantom.semi_axis_b=[5, 8]",
                                           "--set", "trainer.max_epochs=2"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), common.begin(), common.end());
    return a;
  };
  const auto manifest = s("split") + "/manifest.json";
  const bool ok = cli(with({"phantom-gen", "--out", s("data")})) == 0 &&
         cli(with({"split", "--manifest", s("data") + "/manifest.json", "--set", "splits.train=0.5", "--set",
                   "splits.val=0.25", "--set", "splits.test=0.25", "--out", s("split")})) == 0 &&
         cli(with({"select", "--manifest", manifest, "--k", "4", "--out", s("select")})) == 0 &&
         cli(with({"train", "--manifest", manifest, "--out", s("train")})) == 0 &&
         cli(with({"eval", "--manifest", manifest, "--checkpoint", s("train") + "/checkpoint_best.bin", "--out",
                   s("eval")})) == 0 &&
         cli(with({"overlay", "--manifest", manifest, "--pred-dir", s("eval") + "/predictions", "--regions", "--out",
                   s("overlay")})) == 0 &&
         cli(with({"intensity", "--manifest", manifest, "--split", "all", "--out", s("intensity")})) == 0 &&
         cli(with({"report", "--in", s("split"), "--in", s("train"), "--in", s("eval"), "--in", s("intensity"),
                   "--out", s("report")})) == 0;
  fs::current_path(cwd);
  return ok;
}

std::map<std::string, std::vector<std::uint8_t>> tree(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = testing_support::file_bytes(e.path());
  return out;
}

Outcome ac8_determinism() {
  testing_support::TempDir a("ac8"), b("ac8");
  if (!pipeline(a.path()) || !pipeline(b.path())) return {false, "pipeline exited nonzero"};
  const auto ta = tree(a.path()), tb = tree(b.path());
  std::size_t compared = 0, differ = 0, pngs = 0;
  std::string first_diff;
  std::set<std::string> names;
  for (const auto& [k, v] : ta) names.insert(k);
  for (const auto& [k, v] : tb) names.insert(k);
  for (const auto& name : names) {
    ++compared;
    pngs += fs::path(name).extension() == ".png";
    const auto ia = ta.find(name), ib = tb.find(name);
    if (ia == ta.end() || ib == tb.end() || ia->second != ib->second) {
      ++differ;
      if (first_diff.empty()) first_diff = name;
    }
  }
  const bool have_all = ta.count("split/manifest.json") && ta.count("train/checkpoint_best.bin") &&
                        ta.count("eval/per_frame_metrics.csv") && ta.count("intensity/intensity_per_scan.csv");
  return {differ == 0 && have_all && pngs > 0,
          std::to_string(compared) + " files compared (" + std::to_string(pngs) + " PNGs), " + std::to_string(differ) +
              " differ" + (first_diff.empty() ? "" : " e.g. " + first_diff)};
}

// ---- AC9 ----------------------------------------------------------------------------

Outcome ac9_overfit() {
  int reached = 0;
  std::ostringstream os;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    phantom::PhantomSpec spec;
    spec.layers = phantom::default_layers(spec.height);
    Rng rng(derive_seed(909, seed));
    phantom::WoundSpec w;
    w.a = uniform(rng, 12, 22);
    w.b = uniform(rng, 7, 13);
    w.cx = 48 + uniform(rng, -8, 8);
    w.cy = 48 + uniform(rng, -8, 8);
    w.perturbation = uniform(rng, 0.0, 0.15);
    w.center_darkening = uniform(rng, 0.2, 0.5);
    w.rim_brightening = uniform(rng, 1.4, 1.8);
    spec.wound = w;
    const auto p = phantom::generate_phantom(spec, seed);
    const std::vector<train::Sample> one{{"single", p.frame, p.mask}};

    train::TrainConfig tc;
    tc.batch_size = 1;
    tc.max_epochs = 200;
    tc.step_size = 1000;  // constant learning rate over the run
    tc.early_stopping = false;
    tc.target_val_dice = 0.95;
    tc.seed = seed;
    const auto r = train::train_on_samples<float>(unet::build<float>(unet::UNetConfig{}, derive_seed(seed, 3)), one,
                                                  one, tc, augment::AugmentConfig::disabled());
    const bool ok = r.best_val_dice >= 0.95;
    reached += ok;
    os << (seed > 1 ? " " : "") << fmt("%.3f", r.best_val_dice) << "@" << r.history.size();
  }
  return {reached >= 9, std::to_string(reached) + "/10 seeds reach train Dice 0.95 (dice@epochs: " + os.str() + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1", ac1_gradients},  {"AC2", ac2_metrics},     {"AC3", ac3_schedule},
      {"AC4", ac4_morphology}, {"AC5", ac5_training},    {"AC6", ac6_intensity},
      {"AC7", ac7_overlay},    {"AC8", ac8_determinism}, {"AC9", ac9_overfit}};
  const std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << "  " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
