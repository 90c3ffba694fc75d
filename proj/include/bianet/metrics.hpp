#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bianet/dataio.hpp"
#include "bianet/errors.hpp"
#include "bianet/pnm.hpp"

namespace bianet {

// All metric math runs in double regardless of the network's precision.
inline constexpr double kMetricEps = 1e-20;
inline constexpr double kFBetaSquared = 0.3;
inline constexpr int kThresholdCount = 256;

// One evaluation pair: prediction in [0,1] and a binary ground truth of the
// same extent.
struct SaliencyPair {
  int h = 0, w = 0;
  std::vector<double> pred;
  std::vector<double> gt;

  std::size_t count() const { return pred.size(); }

  void validate() const {
    if (h < 1 || w < 1 ||
        pred.size() != static_cast<std::size_t>(h) * w ||
        gt.size() != pred.size()) {
      throw ConfigError("saliency pair: inconsistent extents");
    }
    for (double v : pred) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ConfigError("saliency pair: prediction outside [0,1]");
      }
    }
    for (double v : gt) {
      if (v != 0.0 && v != 1.0) {
        throw ConfigError("saliency pair: ground truth must be binary");
      }
    }
  }

  bool gt_all_zero() const {
    return std::none_of(gt.begin(), gt.end(), [](double v) { return v > 0; });
  }
  bool gt_all_one() const {
    return std::all_of(gt.begin(), gt.end(), [](double v) { return v > 0; });
  }
};

// Precision/recall at the 256 thresholds t_k = k/255 (binarization is >=).
struct PRCurve {
  std::array<double, kThresholdCount> threshold{};
  std::array<double, kThresholdCount> precision{};
  std::array<double, kThresholdCount> recall{};
};

struct MetricReport {
  double s_alpha = 0, max_f = 0, mean_f = 0, adp_f = 0;
  double max_e = 0, mean_e = 0, adp_e = 0, mae = 0;
};

inline double mae(const SaliencyPair& pair) {
  pair.validate();
  double acc = 0;
  for (std::size_t i = 0; i < pair.count(); ++i) {
    acc += std::abs(pair.pred[i] - pair.gt[i]);
  }
  return acc / static_cast<double>(pair.count());
}

inline double adaptive_threshold(const SaliencyPair& pair) {
  double mean = 0;
  for (double v : pair.pred) mean += v;
  mean /= static_cast<double>(pair.count());
  return std::min(2.0 * mean, 1.0);
}

namespace detail {

struct Confusion {
  double tp = 0, fp = 0, fn = 0;
};

inline Confusion confusion_at(const SaliencyPair& pair, double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < pair.count(); ++i) {
    const bool pos = pair.pred[i] >= threshold;
    const bool is_fg = pair.gt[i] > 0;
    if (pos && is_fg) {
      c.tp += 1;
    } else if (pos) {
      c.fp += 1;
    } else if (is_fg) {
      c.fn += 1;
    }
  }
  return c;
}

inline double f_beta(double precision, double recall) {
  return (1.0 + kFBetaSquared) * precision * recall /
         (kFBetaSquared * precision + recall + kMetricEps);
}

// Alignment score of a binarized map against the ground truth.
inline double e_align(const SaliencyPair& pair, double threshold) {
  const std::size_t n = pair.count();
  double sum = 0;
  if (pair.gt_all_zero()) {
    for (std::size_t i = 0; i < n; ++i) {
      sum += pair.pred[i] >= threshold ? 0.0 : 1.0;  // enhanced = 1 - B
    }
  } else if (pair.gt_all_one()) {
    for (std::size_t i = 0; i < n; ++i) {
      sum += pair.pred[i] >= threshold ? 1.0 : 0.0;  // enhanced = B
    }
  } else {
    double mean_g = 0, mean_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mean_g += pair.gt[i];
      mean_b += pair.pred[i] >= threshold ? 1.0 : 0.0;
    }
    mean_g /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double pg = pair.gt[i] - mean_g;
      const double pb = (pair.pred[i] >= threshold ? 1.0 : 0.0) - mean_b;
      const double xi = 2.0 * pg * pb / (pg * pg + pb * pb + kMetricEps);
      sum += (xi + 1.0) * (xi + 1.0) / 4.0;
    }
  }
  const double e =
      sum / (static_cast<double>(pair.h) * pair.w - 1.0 + kMetricEps);
  return std::clamp(e, 0.0, 1.0);
}

}  // namespace detail

inline PRCurve pr_curve(const SaliencyPair& pair) {
  pair.validate();
  PRCurve curve;
  for (int k = 0; k < kThresholdCount; ++k) {
    const double t = static_cast<double>(k) / 255.0;
    const auto c = detail::confusion_at(pair, t);
    curve.threshold[k] = t;
    curve.precision[k] = c.tp / (c.tp + c.fp + kMetricEps);
    curve.recall[k] = c.tp / (c.tp + c.fn + kMetricEps);
  }
  return curve;
}

struct FMeasures {
  double max_f = 0, mean_f = 0, adp_f = 0;
};

inline FMeasures f_measures(const PRCurve& curve, const SaliencyPair& pair) {
  FMeasures out;
  double sum = 0;
  for (int k = 0; k < kThresholdCount; ++k) {
    const double f = detail::f_beta(curve.precision[k], curve.recall[k]);
    out.max_f = std::max(out.max_f, f);
    sum += f;
  }
  out.mean_f = sum / kThresholdCount;
  const auto c = detail::confusion_at(pair, adaptive_threshold(pair));
  out.adp_f = detail::f_beta(c.tp / (c.tp + c.fp + kMetricEps),
                             c.tp / (c.tp + c.fn + kMetricEps));
  return out;
}

struct EMeasures {
  double max_e = 0, mean_e = 0, adp_e = 0;
  std::array<double, kThresholdCount> curve{};
};

inline EMeasures e_measures(const SaliencyPair& pair) {
  pair.validate();
  EMeasures out;
  double sum = 0;
  for (int k = 0; k < kThresholdCount; ++k) {
    const double e = detail::e_align(pair, static_cast<double>(k) / 255.0);
    out.curve[k] = e;
    out.max_e = std::max(out.max_e, e);
    sum += e;
  }
  out.mean_e = sum / kThresholdCount;
  out.adp_e = detail::e_align(pair, adaptive_threshold(pair));
  return out;
}

// ---------------------------------------------------------------------------
// Structure measure
// ---------------------------------------------------------------------------

namespace detail {

struct Moments {
  double mean = 0, var = 0;  // sample variance (n-1)
  std::size_t n = 0;
};

inline Moments moments(const std::vector<double>& v) {
  Moments m;
  m.n = v.size();
  if (m.n == 0) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(m.n);
  if (m.n > 1) {
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(m.n - 1);
  }
  return m;
}

// 2*mean / (mean^2 + 1 + 2*std + eps) over the masked prediction values.
inline double object_score(const std::vector<double>& values) {
  const Moments m = moments(values);
  if (m.n == 0) return 0.0;
  return 2.0 * m.mean /
         (m.mean * m.mean + 1.0 + 2.0 * std::sqrt(m.var) + kMetricEps);
}

// SSIM-like block score with the reference special cases.
inline double region_ssim(const std::vector<double>& x,
                          const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n == 0) return 0.0;
  const Moments mx = moments(x), my = moments(y);
  double cov = 0;
  if (n > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      cov += (x[i] - mx.mean) * (y[i] - my.mean);
    }
    cov /= static_cast<double>(n - 1);
  }
  const double alpha = 4.0 * mx.mean * my.mean * cov;
  const double beta =
      (mx.mean * mx.mean + my.mean * my.mean) * (mx.var + my.var);
  if (alpha != 0.0) return alpha / (beta + kMetricEps);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

}  // namespace detail

// Structure measure: equal mix of the object-aware score (foreground /
// background mean-std statistics) and the region-aware score (SSIM over the
// four blocks cut at the ground-truth centroid, area weighted).
inline double s_measure(const SaliencyPair& pair) {
  pair.validate();
  double mean_pred = 0;
  for (double v : pair.pred) mean_pred += v;
  mean_pred /= static_cast<double>(pair.count());
  if (pair.gt_all_zero()) return std::clamp(1.0 - mean_pred, 0.0, 1.0);
  if (pair.gt_all_one()) return std::clamp(mean_pred, 0.0, 1.0);

  // object term
  double mu = 0;
  for (double v : pair.gt) mu += v;
  mu /= static_cast<double>(pair.count());
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < pair.count(); ++i) {
    if (pair.gt[i] > 0) {
      fg.push_back(pair.pred[i]);
    } else {
      bg.push_back(1.0 - pair.pred[i]);
    }
  }
  const double s_object =
      mu * detail::object_score(fg) + (1.0 - mu) * detail::object_score(bg);

  // region term: blocks cut at the rounded foreground centroid
  double sum_x = 0, sum_y = 0, count_fg = 0;
  for (int y = 0; y < pair.h; ++y) {
    for (int x = 0; x < pair.w; ++x) {
      if (pair.gt[static_cast<std::size_t>(y) * pair.w + x] > 0) {
        sum_x += x;
        sum_y += y;
        count_fg += 1;
      }
    }
  }
  const int cx = static_cast<int>(std::lround(sum_x / count_fg));
  const int cy = static_cast<int>(std::lround(sum_y / count_fg));

  double s_region = 0;
  const int row_splits[3] = {0, cy + 1, pair.h};
  const int col_splits[3] = {0, cx + 1, pair.w};
  for (int by = 0; by < 2; ++by) {
    for (int bx = 0; bx < 2; ++bx) {
      std::vector<double> px, gx;
      for (int y = row_splits[by]; y < row_splits[by + 1]; ++y) {
        for (int x = col_splits[bx]; x < col_splits[bx + 1]; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * pair.w + x;
          px.push_back(pair.pred[i]);
          gx.push_back(pair.gt[i]);
        }
      }
      const double weight =
          static_cast<double>(px.size()) / static_cast<double>(pair.count());
      if (!px.empty()) s_region += weight * detail::region_ssim(px, gx);
    }
  }

  return std::clamp(0.5 * s_object + 0.5 * s_region, 0.0, 1.0);
}

inline MetricReport evaluate_pair(const SaliencyPair& pair) {
  MetricReport r;
  r.mae = mae(pair);
  const PRCurve curve = pr_curve(pair);
  const FMeasures f = f_measures(curve, pair);
  r.max_f = f.max_f;
  r.mean_f = f.mean_f;
  r.adp_f = f.adp_f;
  const EMeasures e = e_measures(pair);
  r.max_e = e.max_e;
  r.mean_e = e.mean_e;
  r.adp_e = e.adp_e;
  r.s_alpha = s_measure(pair);
  return r;
}

// ---------------------------------------------------------------------------
// Dataset evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  // Dataset max F/E maximize the image-averaged curves (the standard
  // protocol). The alternative averages per-image maxima.
  bool max_from_mean_curves = true;
};

struct ImageResult {
  std::string name;
  MetricReport report;
  bool degenerate_gt = false;
};

struct DatasetReport {
  MetricReport aggregate;
  std::vector<ImageResult> images;
  std::vector<std::string> errors;  // one entry per unloadable pair
  int degenerate_gt_count = 0;
  PRCurve mean_pr;
  std::array<double, kThresholdCount> mean_e_curve{};
};

inline DatasetReport evaluate_pairs(
    const std::vector<std::pair<std::string, SaliencyPair>>& pairs,
    const EvalOptions& opt = {}) {
  if (pairs.empty()) throw ConfigError("evaluate: no pairs");
  DatasetReport out;
  const double n = static_cast<double>(pairs.size());
  for (int k = 0; k < kThresholdCount; ++k) {
    out.mean_pr.threshold[k] = static_cast<double>(k) / 255.0;
  }
  for (const auto& [name, pair] : pairs) {
    ImageResult img;
    img.name = name;
    img.report = evaluate_pair(pair);
    img.degenerate_gt = pair.gt_all_zero() || pair.gt_all_one();
    if (img.degenerate_gt) ++out.degenerate_gt_count;

    const PRCurve curve = pr_curve(pair);
    const EMeasures e = e_measures(pair);
    for (int k = 0; k < kThresholdCount; ++k) {
      out.mean_pr.precision[k] += curve.precision[k] / n;
      out.mean_pr.recall[k] += curve.recall[k] / n;
      out.mean_e_curve[k] += e.curve[k] / n;
    }
    out.aggregate.s_alpha += img.report.s_alpha / n;
    out.aggregate.mean_f += img.report.mean_f / n;
    out.aggregate.adp_f += img.report.adp_f / n;
    out.aggregate.mean_e += img.report.mean_e / n;
    out.aggregate.adp_e += img.report.adp_e / n;
    out.aggregate.mae += img.report.mae / n;
    if (!opt.max_from_mean_curves) {
      out.aggregate.max_f += img.report.max_f / n;
      out.aggregate.max_e += img.report.max_e / n;
    }
    out.images.push_back(std::move(img));
  }
  if (opt.max_from_mean_curves) {
    for (int k = 0; k < kThresholdCount; ++k) {
      out.aggregate.max_f = std::max(
          out.aggregate.max_f,
          detail::f_beta(out.mean_pr.precision[k], out.mean_pr.recall[k]));
      out.aggregate.max_e = std::max(out.aggregate.max_e, out.mean_e_curve[k]);
    }
  }
  return out;
}

namespace detail {

inline SaliencyPair pair_from_images(const PnmImage& pred_img,
                                     const PnmImage& gt_img) {
  SaliencyPair pair;
  pair.h = gt_img.height;
  pair.w = gt_img.width;
  pair.gt.resize(static_cast<std::size_t>(pair.h) * pair.w);
  const double gt_scale = 1.0 / gt_img.maxval;
  for (std::size_t i = 0; i < pair.gt.size(); ++i) {
    pair.gt[i] = gt_img.pixels[i] * gt_scale >= 0.5 ? 1.0 : 0.0;
  }
  // 8-bit predictions load as v/255 exactly
  std::vector<double> pred(static_cast<std::size_t>(pred_img.height) *
                           pred_img.width);
  const double pred_scale = 1.0 / pred_img.maxval;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = pred_img.pixels[i] * pred_scale;
  }
  if (pred_img.height != pair.h || pred_img.width != pair.w) {
    std::vector<float> f(pred.begin(), pred.end());
    NoGradGuard off;
    auto t = upsample_bilinear(
        Tensor<float>::from({1, 1, pred_img.height, pred_img.width}, std::move(f)),
        pair.h, pair.w);
    pred.assign(t.values().begin(), t.values().end());
    for (double& v : pred) v = std::clamp(v, 0.0, 1.0);
  }
  pair.pred = std::move(pred);
  return pair;
}

}  // namespace detail

// Evaluates `<pred_dir>/<name>.pgm` against every ground truth in the
// manifest. Missing or unreadable predictions are collected in `errors`.
inline DatasetReport evaluate_dataset(const Manifest& manifest,
                                      const std::filesystem::path& pred_dir,
                                      const EvalOptions& opt = {}) {
  std::vector<std::pair<std::string, SaliencyPair>> pairs;
  std::vector<std::string> errors;
  for (const auto& row : manifest.rows) {
    const auto pred_path = pred_dir / (row.name + ".pgm");
    try {
      const PnmImage pred = read_pnm(pred_path);
      const PnmImage gt = read_pnm(manifest.resolve(row.gt));
      pairs.emplace_back(row.name, detail::pair_from_images(pred, gt));
    } catch (const IoError& e) {
      errors.push_back(row.name + ": " + e.what());
    }
  }
  if (pairs.empty()) {
    throw IoError("evaluate: no prediction/ground-truth pair could be loaded");
  }
  DatasetReport report = evaluate_pairs(pairs, opt);
  report.errors = std::move(errors);
  for (const auto& img : report.images) {
    if (img.degenerate_gt) {
      std::cerr << "warning: degenerate ground truth for " << img.name << "\n";
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

inline constexpr const char* kReportHeader =
    "name,S_alpha,maxF,meanF,adpF,maxE,meanE,adpE,MAE";

inline void write_report_csv(const DatasetReport& report,
                             const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw IoError("report: cannot write " + path.string());
  std::fprintf(f, "%s\n", kReportHeader);
  auto row = [&](const std::string& name, const MetricReport& r) {
    std::fprintf(f, "%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n",
                 name.c_str(), r.s_alpha, r.max_f, r.mean_f, r.adp_f, r.max_e,
                 r.mean_e, r.adp_e, r.mae);
  };
  for (const auto& img : report.images) row(img.name, img.report);
  row("dataset", report.aggregate);
  std::fclose(f);
}

inline void write_pr_csv(const PRCurve& curve,
                         const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw IoError("report: cannot write " + path.string());
  std::fprintf(f, "threshold,precision,recall\n");
  for (int k = 0; k < kThresholdCount; ++k) {
    std::fprintf(f, "%.6f,%.6f,%.6f\n", curve.threshold[k], curve.precision[k],
                 curve.recall[k]);
  }
  std::fclose(f);
}

// Minimal standalone SVG line plot of the PR curve.
inline void write_pr_svg(const PRCurve& curve,
                         const std::filesystem::path& path) {
  const int size = 480, margin = 48;
  const double span = size - 2.0 * margin;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("report: cannot write " + path.string());
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << size
    << "' height='" << size << "'>\n"
    << "<rect width='100%' height='100%' fill='white'/>\n"
    << "<rect x='" << margin << "' y='" << margin << "' width='" << span
    << "' height='" << span << "' fill='none' stroke='black'/>\n";
  f << "<polyline fill='none' stroke='crimson' stroke-width='1.5' points='";
  for (int k = 0; k < kThresholdCount; ++k) {
    const double x = margin + curve.recall[k] * span;
    const double y = size - margin - curve.precision[k] * span;
    f << x << ',' << y << ' ';
  }
  f << "'/>\n";
  f << "<text x='" << size / 2 << "' y='" << size - 12
    << "' text-anchor='middle' font-size='14'>recall</text>\n"
    << "<text x='14' y='" << size / 2
    << "' text-anchor='middle' font-size='14' transform='rotate(-90 14 "
    << size / 2 << ")'>precision</text>\n"
    << "</svg>\n";
}

}  // namespace bianet
