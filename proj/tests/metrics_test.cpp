#include "bianet/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bianet/rng.hpp"

namespace bianet {
namespace {

namespace fs = std::filesystem;

SaliencyPair make_pair(int h, int w, std::vector<double> pred,
                       std::vector<double> gt) {
  SaliencyPair p;
  p.h = h;
  p.w = w;
  p.pred = std::move(pred);
  p.gt = std::move(gt);
  return p;
}

SaliencyPair random_pair(int h, int w, Rng& rng, bool quantized = false) {
  std::vector<double> pred(static_cast<std::size_t>(h) * w);
  std::vector<double> gt(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = rng.uniform();
    if (quantized) pred[i] = std::floor(pred[i] * 255.0) / 255.0;
    gt[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  return make_pair(h, w, std::move(pred), std::move(gt));
}

// ---------------------------------------------------------------------------
// Independent reference implementations (straight loops, no shared helpers).
// ---------------------------------------------------------------------------

struct RefCounts {
  double tp, fp, fn;
};

RefCounts ref_counts(const SaliencyPair& p, double t) {
  RefCounts c{0, 0, 0};
  for (std::size_t i = 0; i < p.pred.size(); ++i) {
    const bool b = p.pred[i] >= t;
    if (p.gt[i] == 1.0) {
      if (b) {
        c.tp += 1;
      } else {
        c.fn += 1;
      }
    } else if (b) {
      c.fp += 1;
    }
  }
  return c;
}

double ref_f(double prec, double rec) {
  return 1.3 * prec * rec / (0.3 * prec + rec + 1e-20);
}

double ref_e_at(const SaliencyPair& p, double t) {
  const std::size_t n = p.pred.size();
  double gsum = 0;
  for (double g : p.gt) gsum += g;
  double sum = 0;
  if (gsum == 0.0) {
    for (std::size_t i = 0; i < n; ++i) sum += p.pred[i] >= t ? 0.0 : 1.0;
  } else if (gsum == static_cast<double>(n)) {
    for (std::size_t i = 0; i < n; ++i) sum += p.pred[i] >= t ? 1.0 : 0.0;
  } else {
    double bsum = 0;
    for (std::size_t i = 0; i < n; ++i) bsum += p.pred[i] >= t ? 1.0 : 0.0;
    const double mg = gsum / n, mb = bsum / n;
    for (std::size_t i = 0; i < n; ++i) {
      const double pg = p.gt[i] - mg;
      const double pb = (p.pred[i] >= t ? 1.0 : 0.0) - mb;
      const double xi = 2.0 * pg * pb / (pg * pg + pb * pb + 1e-20);
      sum += (xi + 1.0) * (xi + 1.0) / 4.0;
    }
  }
  const double e = sum / (static_cast<double>(n) - 1.0 + 1e-20);
  return e < 0.0 ? 0.0 : (e > 1.0 ? 1.0 : e);
}

double ref_adaptive(const SaliencyPair& p) {
  double m = 0;
  for (double v : p.pred) m += v;
  m = 2.0 * m / p.pred.size();
  return m > 1.0 ? 1.0 : m;
}

// Hand-coded structure measure following the documented formulas.
double ref_s_measure(const SaliencyPair& p) {
  const std::size_t n = p.pred.size();
  double mp = 0, mg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += p.pred[i];
    mg += p.gt[i];
  }
  mp /= n;
  mg /= n;
  if (mg == 0.0) return std::clamp(1.0 - mp, 0.0, 1.0);
  if (mg == 1.0) return std::clamp(mp, 0.0, 1.0);

  auto masked_score = [&](bool fg) {
    double sum = 0, sum2 = 0, cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if ((p.gt[i] == 1.0) != fg) continue;
      const double v = fg ? p.pred[i] : 1.0 - p.pred[i];
      sum += v;
      sum2 += v * v;
      cnt += 1;
    }
    if (cnt == 0) return 0.0;
    const double mean = sum / cnt;
    const double var = cnt > 1 ? (sum2 - cnt * mean * mean) / (cnt - 1) : 0.0;
    const double sd = std::sqrt(var > 0 ? var : 0.0);
    return 2.0 * mean / (mean * mean + 1.0 + 2.0 * sd + 1e-20);
  };
  const double so = mg * masked_score(true) + (1.0 - mg) * masked_score(false);

  double sx = 0, sy = 0, cfg = 0;
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x)
      if (p.gt[static_cast<std::size_t>(y) * p.w + x] == 1.0) {
        sx += x;
        sy += y;
        cfg += 1;
      }
  const int cx = static_cast<int>(std::lround(sx / cfg));
  const int cy = static_cast<int>(std::lround(sy / cfg));

  double sr = 0;
  for (int quad = 0; quad < 4; ++quad) {
    const int y0 = quad / 2 == 0 ? 0 : cy + 1;
    const int y1 = quad / 2 == 0 ? cy + 1 : p.h;
    const int x0 = quad % 2 == 0 ? 0 : cx + 1;
    const int x1 = quad % 2 == 0 ? cx + 1 : p.w;
    const double cnt = static_cast<double>(y1 - y0) * (x1 - x0);
    if (cnt <= 0) continue;
    double sxv = 0, syv = 0, sxx = 0, syy = 0, sxy = 0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * p.w + x;
        sxv += p.pred[i];
        syv += p.gt[i];
        sxx += p.pred[i] * p.pred[i];
        syy += p.gt[i] * p.gt[i];
        sxy += p.pred[i] * p.gt[i];
      }
    const double mx = sxv / cnt, my = syv / cnt;
    double vx = 0, vy = 0, cov = 0;
    if (cnt > 1) {
      vx = (sxx - cnt * mx * mx) / (cnt - 1);
      vy = (syy - cnt * my * my) / (cnt - 1);
      cov = (sxy - cnt * mx * my) / (cnt - 1);
    }
    const double alpha = 4.0 * mx * my * cov;
    const double beta = (mx * mx + my * my) * (vx + vy);
    double q;
    if (alpha != 0.0) {
      q = alpha / (beta + 1e-20);
    } else if (beta == 0.0) {
      q = 1.0;
    } else {
      q = 0.0;
    }
    sr += (cnt / n) * q;
  }
  return std::clamp(0.5 * so + 0.5 * sr, 0.0, 1.0);
}

// ---------------------------------------------------------------------------

TEST(Mae, PointCasesAndOracle) {
  auto same = make_pair(2, 2, {0, 1, 1, 0}, {0, 1, 1, 0});
  EXPECT_EQ(mae(same), 0.0);

  auto half = make_pair(2, 2, {0.5, 0.5, 0.5, 0.5}, {0, 1, 1, 0});
  EXPECT_DOUBLE_EQ(mae(half), 0.5);

  Rng rng(1);
  auto p = random_pair(3, 3, rng);
  double acc = 0;
  for (int i = 0; i < 9; ++i) acc += std::abs(p.pred[i] - p.gt[i]);
  EXPECT_NEAR(mae(p), acc / 9.0, 1e-12);
}

TEST(Mae, ComplementInvariance) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_pair(4, 5, rng);
    SaliencyPair q = p;
    for (auto& v : q.pred) v = 1.0 - v;
    for (auto& v : q.gt) v = 1.0 - v;
    EXPECT_NEAR(mae(p), mae(q), 1e-12);
  }
}

TEST(PrCurve, PerfectPrediction) {
  auto p = make_pair(2, 2, {0, 1, 1, 0}, {0, 1, 1, 0});
  auto c = pr_curve(p);
  for (int k = 1; k < 256; ++k) {
    EXPECT_NEAR(c.precision[k], 1.0, 1e-12) << k;
    EXPECT_NEAR(c.recall[k], 1.0, 1e-12) << k;
  }
}

TEST(PrCurve, AllOnesPrediction) {
  auto p = make_pair(2, 2, {1, 1, 1, 1}, {1, 1, 0, 0});
  auto c = pr_curve(p);
  for (int k = 0; k < 256; ++k) {
    EXPECT_NEAR(c.precision[k], 0.5, 1e-12);
    EXPECT_NEAR(c.recall[k], 1.0, 1e-12);
  }
}

TEST(PrCurve, MatchesExhaustiveCounts) {
  Rng rng(3);
  auto p = random_pair(4, 4, rng);
  auto c = pr_curve(p);
  for (int k = 0; k < 256; ++k) {
    const auto rc = ref_counts(p, k / 255.0);
    EXPECT_EQ(c.precision[k], rc.tp / (rc.tp + rc.fp + 1e-20));
    EXPECT_EQ(c.recall[k], rc.tp / (rc.tp + rc.fn + 1e-20));
  }
}

TEST(PrCurve, RecallNonIncreasingAndZeroGt) {
  Rng rng(4);
  auto p = random_pair(5, 5, rng);
  auto c = pr_curve(p);
  for (int k = 1; k < 256; ++k) EXPECT_LE(c.recall[k], c.recall[k - 1]);

  auto z = random_pair(3, 3, rng);
  std::fill(z.gt.begin(), z.gt.end(), 0.0);
  auto cz = pr_curve(z);
  for (int k = 0; k < 256; ++k) EXPECT_EQ(cz.recall[k], 0.0);
}

TEST(FMeasures, PointFormulaCases) {
  EXPECT_DOUBLE_EQ(detail::f_beta(1.0, 1.0), 1.3 / 1.3);
  EXPECT_DOUBLE_EQ(detail::f_beta(1.0, 0.0), 0.0);
  EXPECT_NEAR(detail::f_beta(0.5, 1.0), 0.565217, 1e-6);
}

TEST(FMeasures, MaxDominatesOnQuantizedPairs) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_pair(6, 6, rng, /*quantized=*/true);
    auto f = f_measures(pr_curve(p), p);
    EXPECT_GE(f.max_f, f.mean_f - 1e-12);
    EXPECT_GE(f.max_f, f.adp_f - 1e-12);
  }
}

TEST(EMeasures, PerfectAndAntiPerfect) {
  auto g = make_pair(2, 2, {1, 0, 0, 1}, {1, 0, 0, 1});
  auto e = e_measures(g);
  for (int k = 1; k < 256; ++k) EXPECT_EQ(e.curve[k], 1.0);

  auto anti = make_pair(2, 2, {0, 1, 1, 0}, {1, 0, 0, 1});
  auto ea = e_measures(anti);
  for (int k = 1; k < 256; ++k) EXPECT_EQ(ea.curve[k], 0.0);
}

TEST(EMeasures, MatchesHandFormula) {
  Rng rng(6);
  auto p = random_pair(4, 4, rng);
  auto e = e_measures(p);
  for (int k = 0; k < 256; ++k) {
    EXPECT_EQ(e.curve[k], ref_e_at(p, k / 255.0)) << k;
  }
  EXPECT_EQ(e.adp_e, ref_e_at(p, ref_adaptive(p)));
}

TEST(SMeasure, PerfectAndDegenerate) {
  auto p = make_pair(3, 3, {1, 1, 0, 1, 1, 0, 0, 0, 0},
                     {1, 1, 0, 1, 1, 0, 0, 0, 0});
  EXPECT_DOUBLE_EQ(s_measure(p), 1.0);

  auto z = make_pair(2, 2, {0, 0, 0, 0}, {0, 0, 0, 0});
  EXPECT_DOUBLE_EQ(s_measure(z), 1.0);
  auto z2 = make_pair(2, 2, {0.25, 0.25, 0.25, 0.25}, {0, 0, 0, 0});
  EXPECT_DOUBLE_EQ(s_measure(z2), 0.75);
  auto o = make_pair(2, 2, {0.5, 0.5, 0.5, 0.5}, {1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(s_measure(o), 0.5);
}

TEST(SMeasure, FixedCaseMatchesReference) {
  std::vector<double> pred = {0.9, 0.8, 0.1, 0.2, 0.7, 0.9, 0.3, 0.1,
                              0.2, 0.4, 0.6, 0.5, 0.1, 0.0, 0.3, 0.8,
                              0.9, 0.9, 0.2, 0.1, 0.5, 0.6, 0.7, 0.2,
                              0.3, 0.1, 0.0, 0.9, 0.8, 0.2, 0.4, 0.6,
                              0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8,
                              0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2,
                              0.1, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6,
                              0.7, 0.8, 0.9, 1.0, 0.9, 0.8, 0.7, 0.6};
  std::vector<double> gt(64, 0.0);
  for (int i : {0, 1, 4, 5, 8, 9, 16, 17, 20, 21, 27, 28, 59, 60}) gt[i] = 1.0;
  auto p = make_pair(8, 8, pred, gt);
  EXPECT_NEAR(s_measure(p), ref_s_measure(p), 1e-12);
}

TEST(SMeasure, RandomPairsMatchReference) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_pair(8, 8, rng);
    EXPECT_NEAR(s_measure(p), ref_s_measure(p), 1e-9) << trial;
  }
}

// Exhaustive oracle equivalence over all 512 binary 3x3 predictions.
TEST(MetricOracles, AllBinaryPredictionsMatchBruteForce) {
  std::vector<double> gt = {1, 0, 0, 1, 1, 0, 0, 0, 1};
  for (int mask = 0; mask < 512; ++mask) {
    std::vector<double> pred(9);
    for (int i = 0; i < 9; ++i) pred[i] = (mask >> i) & 1 ? 1.0 : 0.0;
    auto p = make_pair(3, 3, pred, gt);

    auto c = pr_curve(p);
    auto f = f_measures(c, p);
    auto e = e_measures(p);

    double max_f = 0, sum_f = 0;
    for (int k = 0; k < 256; ++k) {
      const auto rc = ref_counts(p, k / 255.0);
      const double prec = rc.tp / (rc.tp + rc.fp + 1e-20);
      const double rec = rc.tp / (rc.tp + rc.fn + 1e-20);
      ASSERT_EQ(c.precision[k], prec) << mask << " k=" << k;
      ASSERT_EQ(c.recall[k], rec);
      const double fb = ref_f(prec, rec);
      max_f = std::max(max_f, fb);
      sum_f += fb;
      ASSERT_EQ(e.curve[k], ref_e_at(p, k / 255.0));
    }
    ASSERT_EQ(f.max_f, max_f);
    ASSERT_EQ(f.mean_f, sum_f / 256.0);
    const double tau = ref_adaptive(p);
    const auto rc = ref_counts(p, tau);
    ASSERT_EQ(f.adp_f, ref_f(rc.tp / (rc.tp + rc.fp + 1e-20),
                             rc.tp / (rc.tp + rc.fn + 1e-20)));
    ASSERT_EQ(e.adp_e, ref_e_at(p, tau));

    double m = 0;
    for (int i = 0; i < 9; ++i) m += std::abs(pred[i] - gt[i]);
    ASSERT_NEAR(mae(p), m / 9.0, 1e-12);
  }
}

TEST(MetricInvariants, RangeAndBinaryThresholdInvariance) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_pair(5, 4, rng, /*quantized=*/true);
    auto rep = evaluate_pair(p);
    for (double v : {rep.s_alpha, rep.max_f, rep.mean_f, rep.adp_f, rep.max_e,
                     rep.mean_e, rep.adp_e, rep.mae}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }

  // already-binary prediction: the sweep is flat over t in (0,1]
  auto p = random_pair(4, 4, rng);
  for (auto& v : p.pred) v = v < 0.5 ? 0.0 : 1.0;
  auto c = pr_curve(p);
  auto e = e_measures(p);
  for (int k = 2; k < 256; ++k) {
    EXPECT_EQ(c.precision[k], c.precision[1]);
    EXPECT_EQ(c.recall[k], c.recall[1]);
    EXPECT_EQ(e.curve[k], e.curve[1]);
  }
}

TEST(DatasetEval, PerfectPredictionsAndAggregationIdentity) {
  Rng rng(9);
  std::vector<std::pair<std::string, SaliencyPair>> pairs;
  for (int i = 0; i < 3; ++i) {
    auto p = random_pair(6, 6, rng);
    for (std::size_t j = 0; j < p.pred.size(); ++j) p.pred[j] = p.gt[j];
    pairs.emplace_back("img" + std::to_string(i), p);
  }
  auto rep = evaluate_pairs(pairs);
  EXPECT_NEAR(rep.aggregate.mae, 0.0, 1e-12);
  EXPECT_NEAR(rep.aggregate.max_f, 1.0, 1e-9);
  EXPECT_NEAR(rep.aggregate.max_e, 1.0, 1e-9);
  EXPECT_NEAR(rep.aggregate.s_alpha, 1.0, 1e-9);

  // single image: aggregate equals the per-image report
  auto single = evaluate_pairs({pairs[0]});
  EXPECT_EQ(single.aggregate.mae, single.images[0].report.mae);
  EXPECT_EQ(single.aggregate.mean_f, single.images[0].report.mean_f);
  EXPECT_NEAR(single.aggregate.max_f, single.images[0].report.max_f, 1e-12);
}

TEST(DatasetEval, ManualAggregationOracle) {
  Rng rng(10);
  std::vector<std::pair<std::string, SaliencyPair>> pairs;
  for (int i = 0; i < 3; ++i) {
    pairs.emplace_back("img" + std::to_string(i), random_pair(5, 5, rng));
  }
  auto rep = evaluate_pairs(pairs);

  double mean_s = 0, mean_mae = 0, mean_adp_f = 0;
  std::array<double, 256> mp{}, mr{}, me{};
  for (const auto& [name, p] : pairs) {
    mean_s += s_measure(p) / 3.0;
    mean_mae += mae(p) / 3.0;
    auto c = pr_curve(p);
    auto f = f_measures(c, p);
    auto e = e_measures(p);
    mean_adp_f += f.adp_f / 3.0;
    for (int k = 0; k < 256; ++k) {
      mp[k] += c.precision[k] / 3.0;
      mr[k] += c.recall[k] / 3.0;
      me[k] += e.curve[k] / 3.0;
    }
  }
  double max_f = 0, max_e = 0;
  for (int k = 0; k < 256; ++k) {
    max_f = std::max(max_f, ref_f(mp[k], mr[k]));
    max_e = std::max(max_e, me[k]);
  }
  EXPECT_NEAR(rep.aggregate.s_alpha, mean_s, 1e-12);
  EXPECT_NEAR(rep.aggregate.mae, mean_mae, 1e-12);
  EXPECT_NEAR(rep.aggregate.adp_f, mean_adp_f, 1e-12);
  EXPECT_NEAR(rep.aggregate.max_f, max_f, 1e-12);
  EXPECT_NEAR(rep.aggregate.max_e, max_e, 1e-12);

  // per-image-maxima mode
  EvalOptions opt;
  opt.max_from_mean_curves = false;
  auto rep2 = evaluate_pairs(pairs, opt);
  double avg_max_f = 0;
  for (const auto& img : rep.images) avg_max_f += img.report.max_f / 3.0;
  EXPECT_NEAR(rep2.aggregate.max_f, avg_max_f, 1e-12);
}

TEST(DatasetEval, FilesReportAndMissingPrediction) {
  const fs::path dir = fs::temp_directory_path() / "bianet_eval_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "pred");

  // two tiny gt files + predictions; the second prediction is missing
  std::vector<ManifestRow> rows;
  for (int i = 0; i < 2; ++i) {
    PnmImage gt = make_gray8(4, 4);
    for (int j = 0; j < 8; ++j) gt.pixels[j] = 255;
    const std::string name = "img" + std::to_string(i);
    write_pnm(dir / (name + "_gt.pgm"), gt);
    rows.push_back({name, name + "_gt.pgm", name + "_gt.pgm", name + "_gt.pgm"});
    if (i == 0) {
      write_pnm(dir / "pred" / (name + ".pgm"), gt);
    }
  }
  write_manifest(dir / "manifest.csv", rows);

  auto manifest = read_manifest(dir / "manifest.csv");
  auto report = evaluate_dataset(manifest, dir / "pred");
  EXPECT_EQ(report.images.size(), 1u);
  ASSERT_EQ(report.errors.size(), 1u);
  EXPECT_NE(report.errors[0].find("img1"), std::string::npos);
  EXPECT_NEAR(report.aggregate.mae, 0.0, 1e-12);

  write_report_csv(report, dir / "report.csv");
  std::ifstream f(dir / "report.csv");
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "name,S_alpha,maxF,meanF,adpF,maxE,meanE,adpE,MAE");

  write_pr_csv(report.mean_pr, dir / "pr.csv");
  write_pr_svg(report.mean_pr, dir / "pr.svg");
  EXPECT_TRUE(fs::exists(dir / "pr.csv"));
  EXPECT_TRUE(fs::exists(dir / "pr.svg"));
  std::ifstream pr(dir / "pr.csv");
  std::getline(pr, header);
  EXPECT_EQ(header, "threshold,precision,recall");
  int lines = 0;
  while (std::getline(pr, header)) ++lines;
  EXPECT_EQ(lines, 256);
}

}  // namespace
}  // namespace bianet
