#include "fedda/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

namespace fedda::metrics {

namespace {

void check_pair(const Mask& a, const Mask& b) {
  if (a.dims != b.dims) throw std::invalid_argument("masks have different dimensions");
  for (auto v : a.values)
    if (v > 1) throw std::invalid_argument("mask is not binary");
  for (auto v : b.values)
    if (v > 1) throw std::invalid_argument("mask is not binary");
}

double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 1.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

// 1-D squared distance transform of sampled function f (lower envelope of
// parabolas), exact for integer-valued inputs.
void edt_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v,
            std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (f[v[k]] == kInf) {
      v[k] = q;
      continue;
    }
    double s;
    while (true) {
      const double qd = static_cast<double>(q), vd = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vd * vd)) / (2.0 * qd - 2.0 * vd);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (f[v[0]] == kInf) {
    for (std::size_t q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

// Squared Euclidean distance from every voxel to the nearest seed voxel.
std::vector<double> squared_distance_field(const Mask& shape, const std::vector<Voxel>& seeds) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::size_t D = shape.dims[0], H = shape.dims[1], W = shape.dims[2];
  std::vector<double> field(D * H * W, kInf);
  for (const auto& s : seeds) field[shape.index(s[0], s[1], s[2])] = 0.0;
  const std::size_t n = std::max({D, H, W});
  std::vector<double> in(n), out(n), z(n + 1);
  std::vector<std::size_t> v(n);
  auto pass = [&](std::size_t len, std::size_t stride, auto base_of, std::size_t lines) {
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t base = base_of(l);
      for (std::size_t i = 0; i < len; ++i) in[i] = field[base + i * stride];
      edt_1d(in.data(), out.data(), len, v, z);
      for (std::size_t i = 0; i < len; ++i) field[base + i * stride] = out[i];
    }
  };
  pass(W, 1, [&](std::size_t l) { return l * W; }, D * H);
  pass(H, W, [&](std::size_t l) { return (l / W) * H * W + l % W; }, D * W);
  pass(D, H * W, [&](std::size_t l) { return l; }, H * W);
  return field;
}

}  // namespace

OverlapMetrics overlap_metrics(const Mask& pred, const Mask& gt) {
  check_pair(pred, gt);
  OverlapMetrics m;
  auto& c = m.counts;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.values[i], g = gt.values[i];
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  m.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, m.degenerate);
  m.sn = ratio(c.tp, c.tp + c.fn, m.degenerate);
  m.sp = ratio(c.tn, c.tn + c.fp, m.degenerate);
  return m;
}

std::vector<Voxel> boundary_voxels(const Mask& mask) {
  const int D = static_cast<int>(mask.dims[0]), H = static_cast<int>(mask.dims[1]),
            W = static_cast<int>(mask.dims[2]);
  auto fg = [&](int z, int y, int x) {
    if (z < 0 || y < 0 || x < 0 || z >= D || y >= H || x >= W) return false;
    return mask(z, y, x) != 0;
  };
  std::vector<Voxel> out;
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!fg(z, y, x)) continue;
        if (!fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) || !fg(z, y + 1, x) ||
            !fg(z, y, x - 1) || !fg(z, y, x + 1)) {
          out.push_back({z, y, x});
        }
      }
  return out;
}

SurfaceDistances surface_distances(const Mask& pred, const Mask& gt) {
  check_pair(pred, gt);
  const auto bp = boundary_voxels(pred);
  const auto bg = boundary_voxels(gt);
  if (bp.empty() || bg.empty()) {
    throw UndefinedMetric("surface distance undefined: " +
                          std::string(bp.empty() ? "prediction" : "reference") + " mask is empty");
  }
  const auto to_gt = squared_distance_field(gt, bg);
  const auto to_pred = squared_distance_field(pred, bp);
  SurfaceDistances out;
  double sum = 0.0, worst = 0.0;
  for (const auto& v : bp) {
    const double d = std::sqrt(to_gt[gt.index(v[0], v[1], v[2])]);
    sum += d;
    worst = std::max(worst, d);
  }
  for (const auto& v : bg) {
    const double d = std::sqrt(to_pred[pred.index(v[0], v[1], v[2])]);
    sum += d;
    worst = std::max(worst, d);
  }
  out.hd = worst;
  out.asd = sum / static_cast<double>(bp.size() + bg.size());
  return out;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: lengths differ");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  TTestResult r;
  r.dof = n - 1;
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) {
    r.degenerate = true;
    r.t = std::numeric_limits<double>::quiet_NaN();
    r.p = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(r.dof));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

CaseMetrics evaluate_case(std::string subject, std::size_t gate, model::Structure structure,
                          const Mask& pred, const Mask& gt) {
  CaseMetrics c;
  c.subject = std::move(subject);
  c.gate = gate;
  c.structure = structure;
  c.overlap = overlap_metrics(pred, gt);
  try {
    c.surface = surface_distances(pred, gt);
  } catch (const UndefinedMetric&) {
    c.surface.reset();
  }
  return c;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

MetricsReport metrics_report(std::vector<CaseMetrics> cases) {
  MetricsReport r;
  for (auto structure : {model::Structure::kEndo, model::Structure::kEpi}) {
    std::vector<double> dsc, hd, asd, sn, sp;
    for (const auto& c : cases) {
      if (c.structure != structure) continue;
      dsc.push_back(c.overlap.dsc);
      sn.push_back(c.overlap.sn);
      sp.push_back(c.overlap.sp);
      if (c.surface) {
        hd.push_back(c.surface->hd);
        asd.push_back(c.surface->asd);
      }
    }
    if (dsc.empty()) continue;
    r.aggregates.push_back(
        {structure, summarize(dsc), summarize(hd), summarize(asd), summarize(sn), summarize(sp)});
  }
  r.cases = std::move(cases);
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const Summary& s, bool use_std) {
  if (s.count == 0) return "";
  return fmt(use_std ? s.std : s.mean);
}

}  // namespace

std::string to_csv(const MetricsReport& report) {
  std::string out = "subject,gate,structure,dsc,hd,asd,sn,sp\n";
  for (const auto& c : report.cases) {
    out += c.subject + "," + std::to_string(c.gate) + "," + model::to_string(c.structure) + "," +
           fmt(c.overlap.dsc) + "," + (c.surface ? fmt(c.surface->hd) : "") + "," +
           (c.surface ? fmt(c.surface->asd) : "") + "," + fmt(c.overlap.sn) + "," +
           fmt(c.overlap.sp) + "\n";
  }
  for (const auto& a : report.aggregates) {
    for (bool use_std : {false, true}) {
      out += std::string(use_std ? "std" : "mean") + ",," + model::to_string(a.structure) + "," +
             fmt(a.dsc, use_std) + "," + fmt(a.hd, use_std) + "," + fmt(a.asd, use_std) + "," +
             fmt(a.sn, use_std) + "," + fmt(a.sp, use_std) + "\n";
    }
  }
  return out;
}

}  // namespace fedda::metrics
