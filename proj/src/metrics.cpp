#include "jobvs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

namespace jobvs {

double dsc(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw DataError("dsc: shape mismatch");
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    np += pred[i] != 0;
    ng += gt[i] != 0;
    inter += (pred[i] != 0) && (gt[i] != 0);
  }
  if (np + ng == 0) return 1.0;
  return static_cast<double>(2 * inter) / static_cast<double>(np + ng);
}

namespace {

// Threshold groups in descending probability: (value, group size, positives).
struct Group {
  float value;
  std::size_t count;
  std::size_t positives;
};

std::vector<Group> threshold_groups(std::span<const float> prob, std::span<const std::uint8_t> gt,
                                    std::size_t& npos) {
  if (prob.size() != gt.size()) throw DataError("metric: shape mismatch");
  npos = 0;
  for (auto g : gt) npos += g != 0;
  if (npos == 0) throw DataError("metric undefined for an empty ground truth");
  std::vector<std::size_t> order(prob.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return prob[a] > prob[b]; });
  std::vector<Group> groups;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    if (std::isnan(prob[i])) throw NumericalError("metric: NaN probability");
    if (groups.empty() || groups.back().value != prob[i]) groups.push_back({prob[i], 0, 0});
    ++groups.back().count;
    groups.back().positives += gt[i] != 0;
  }
  return groups;
}

}  // namespace

double average_precision(std::span<const float> prob, std::span<const std::uint8_t> gt) {
  std::size_t npos = 0;
  const auto groups = threshold_groups(prob, gt, npos);
  std::size_t tp = 0, n = 0;
  double sum = 0.0;
  for (const Group& g : groups) {
    n += g.count;
    tp += g.positives;
    if (g.positives == 0) continue;
    sum += static_cast<double>(tp) / static_cast<double>(n) * static_cast<double>(g.positives);
  }
  return sum / static_cast<double>(npos);
}

F1Result max_f1(std::span<const float> prob, std::span<const std::uint8_t> gt) {
  std::size_t npos = 0;
  const auto groups = threshold_groups(prob, gt, npos);
  std::size_t tp = 0, n = 0, best_tp = 0, best_den = 1;
  F1Result best;
  for (const Group& g : groups) {
    n += g.count;
    tp += g.positives;
    // F1 = 2TP / (2TP + FP + FN) = 2TP / (n + npos); compare fractions exactly.
    const std::size_t den = n + npos;
    if (2 * tp * best_den >= 2 * best_tp * den) {
      best_tp = tp;
      best_den = den;
      best.threshold = g.value;
    }
  }
  best.f1 = static_cast<double>(2 * best_tp) / static_cast<double>(best_den);
  return best;
}

namespace {

struct Neighbourhood {
  std::array<std::vector<int>, 27> adj26;  // among the 26 neighbours
  std::array<std::vector<int>, 27> adj6;   // among N18
  std::array<bool, 27> in18{};
  std::array<bool, 27> face{};

  Neighbourhood() {
    auto coord = [](int i) { return std::array<int, 3>{i % 3 - 1, (i / 3) % 3 - 1, i / 9 - 1}; };
    for (int i = 0; i < 27; ++i) {
      if (i == 13) continue;
      const auto a = coord(i);
      const int l1 = std::abs(a[0]) + std::abs(a[1]) + std::abs(a[2]);
      in18[i] = l1 <= 2;
      face[i] = l1 == 1;
      for (int j = 0; j < 27; ++j) {
        if (j == 13 || j == i) continue;
        const auto b = coord(j);
        const int dx = std::abs(a[0] - b[0]), dy = std::abs(a[1] - b[1]), dz = std::abs(a[2] - b[2]);
        if (std::max({dx, dy, dz}) == 1) adj26[i].push_back(j);
        if (dx + dy + dz == 1) adj6[i].push_back(j);
      }
    }
  }
};

const Neighbourhood& nbhd_tables() {
  static const Neighbourhood t;
  return t;
}

}  // namespace

bool is_simple_point(const std::array<bool, 27>& n) {
  const Neighbourhood& t = nbhd_tables();
  std::array<bool, 27> seen{};
  int stack[27];

  int fg_components = 0;
  for (int s = 0; s < 27; ++s) {
    if (s == 13 || !n[s] || seen[s]) continue;
    if (++fg_components > 1) return false;
    int top = 0;
    stack[top++] = s;
    seen[s] = true;
    while (top) {
      const int v = stack[--top];
      for (int w : t.adj26[v])
        if (n[w] && !seen[w]) {
          seen[w] = true;
          stack[top++] = w;
        }
    }
  }
  if (fg_components != 1) return false;

  seen.fill(false);
  int bg_components = 0;
  for (int s = 0; s < 27; ++s) {
    if (!t.face[s] || n[s] || seen[s]) continue;
    if (++bg_components > 1) return false;
    int top = 0;
    stack[top++] = s;
    seen[s] = true;
    while (top) {
      const int v = stack[--top];
      for (int w : t.adj6[v])
        if (t.in18[w] && !n[w] && !seen[w]) {
          seen[w] = true;
          stack[top++] = w;
        }
    }
  }
  return bg_components == 1;
}

Grid3<std::uint8_t> skeletonize3d(const Grid3<std::uint8_t>& mask) {
  Grid3<std::uint8_t> g = mask;
  for (auto& v : g.values()) v = v != 0;
  const Shape3 s = g.shape();
  const auto nx = static_cast<long>(s[0]), ny = static_cast<long>(s[1]), nz = static_cast<long>(s[2]);
  auto fg = [&](long x, long y, long z) {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz && g(x, y, z) != 0;
  };
  static constexpr int dirs[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  std::vector<std::array<long, 3>> candidates;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& d : dirs) {
      candidates.clear();
      for (long z = 0; z < nz; ++z)
        for (long y = 0; y < ny; ++y)
          for (long x = 0; x < nx; ++x)
            if (g(x, y, z) && !fg(x + d[0], y + d[1], z + d[2])) candidates.push_back({x, y, z});
      for (const auto& c : candidates) {
        std::array<bool, 27> n{};
        int count = 0;
        for (int i = 0; i < 27; ++i) {
          if (i == 13) continue;
          n[i] = fg(c[0] + i % 3 - 1, c[1] + (i / 3) % 3 - 1, c[2] + i / 9 - 1);
          count += n[i];
        }
        if (count <= 1) continue;
        if (is_simple_point(n)) {
          g(c[0], c[1], c[2]) = 0;
          changed = true;
        }
      }
    }
  }
  return g;
}

std::size_t count_components26(const Grid3<std::uint8_t>& mask) {
  const Shape3 s = mask.shape();
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t comps = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i] || seen[i]) continue;
    ++comps;
    seen[i] = 1;
    stack.push_back(i);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      const long x = static_cast<long>(v % s[0]), y = static_cast<long>((v / s[0]) % s[1]),
                 z = static_cast<long>(v / (s[0] * s[1]));
      for (long dz = -1; dz <= 1; ++dz)
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long xx = x + dx, yy = y + dy, zz = z + dz;
            if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<long>(s[0]) || yy >= static_cast<long>(s[1]) ||
                zz >= static_cast<long>(s[2]))
              continue;
            const std::size_t w = mask.index(xx, yy, zz);
            if (mask[w] && !seen[w]) {
              seen[w] = 1;
              stack.push_back(w);
            }
          }
    }
  }
  return comps;
}

double cl_dice(const Grid3<std::uint8_t>& pred, const Grid3<std::uint8_t>& gt) {
  if (pred.shape() != gt.shape()) throw DataError("cl_dice: shape mismatch");
  const auto sp = skeletonize3d(pred);
  const auto sg = skeletonize3d(gt);
  std::size_t nsp = 0, nsg = 0, sp_in_g = 0, sg_in_p = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    nsp += sp[i];
    nsg += sg[i];
    sp_in_g += sp[i] && gt[i];
    sg_in_p += sg[i] && pred[i];
  }
  if (nsp == 0 && nsg == 0) return 1.0;
  if (nsp == 0 || nsg == 0) return 0.0;
  const double tprec = static_cast<double>(sp_in_g) / static_cast<double>(nsp);
  const double tsens = static_cast<double>(sg_in_p) / static_cast<double>(nsg);
  if (tprec + tsens == 0.0) return 0.0;
  return 2.0 * tprec * tsens / (tprec + tsens);
}

SubjectMetrics evaluate_subject(const PredictionVolume& pred, const SubjectRecord& rec, const std::string& mode,
                                int fold) {
  SubjectMetrics m{.id = rec.id, .fold = fold, .mode = mode};
  if (pred.vessel_prob) {
    const Volume& v = *pred.vessel_prob;
    if (v.shape() != rec.vessel.shape()) throw DataError(rec.id + ": prediction shape does not match labels");
    const bool any = std::any_of(rec.vessel.grid.values().begin(), rec.vessel.grid.values().end(),
                                 [](std::uint8_t x) { return x != 0; });
    if (any) {
      m.vessel_ap = average_precision(v.grid.values(), rec.vessel.grid.values());
      const F1Result f1 = max_f1(v.grid.values(), rec.vessel.grid.values());
      m.vessel_f1 = f1.f1;
      m.vessel_f1_threshold = f1.threshold;
      m.vessel_cldice = cl_dice(binarize(v).grid, rec.vessel.grid);
    } else {
      std::cerr << "warning: " << rec.id << ": no vessel voxels, vessel metrics skipped\n";
    }
  }
  if (pred.brain_prob) {
    if (pred.brain_prob->shape() != rec.brain.shape()) throw DataError(rec.id + ": brain shape mismatch");
    m.brain_dsc = dsc(binarize(*pred.brain_prob).grid.values(), rec.brain.grid.values());
  }
  return m;
}

MetricSummary mean_std(const std::vector<double>& values) {
  MetricSummary s;
  s.n_folds = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

namespace {

using MetricGetter = std::optional<double> SubjectMetrics::*;
const std::vector<std::pair<std::string, MetricGetter>>& metric_fields() {
  static const std::vector<std::pair<std::string, MetricGetter>> f{{"vessel_ap", &SubjectMetrics::vessel_ap},
                                                                   {"vessel_f1", &SubjectMetrics::vessel_f1},
                                                                   {"vessel_cldice", &SubjectMetrics::vessel_cldice},
                                                                   {"brain_dsc", &SubjectMetrics::brain_dsc}};
  return f;
}

}  // namespace

MetricsReport evaluate_cohort(std::vector<SubjectMetrics> subjects) {
  if (subjects.empty()) throw DataError("evaluate_cohort: no subjects");
  MetricsReport r;
  r.subjects = std::move(subjects);
  std::map<std::string, std::map<std::string, std::map<int, std::vector<double>>>> groups;
  for (const auto& s : r.subjects)
    for (const auto& [name, field] : metric_fields())
      if (s.*field) groups[s.mode][name][s.fold].push_back(*(s.*field));
  for (const auto& [mode, metrics] : groups)
    for (const auto& [name, folds] : metrics) {
      std::vector<double> fold_means;
      std::size_t n = 0;
      for (const auto& [fold, vals] : folds) {
        fold_means.push_back(mean_std(vals).mean);
        n += vals.size();
      }
      MetricSummary sm = mean_std(fold_means);
      sm.n_subjects = n;
      r.summary[mode][name] = sm;
    }
  return r;
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : report.subjects) {
    nlohmann::json j{{"id", s.id}, {"fold", s.fold}, {"mode", s.mode}};
    for (const auto& [name, field] : metric_fields()) j[name] = s.*field ? nlohmann::json(*(s.*field)) : nlohmann::json(nullptr);
    j["vessel_f1_threshold"] = s.vessel_f1_threshold ? nlohmann::json(*s.vessel_f1_threshold) : nlohmann::json(nullptr);
    subjects.push_back(j);
  }
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [mode, metrics] : report.summary)
    for (const auto& [name, sm] : metrics)
      summary[mode][name] = {{"mean", sm.mean}, {"std", sm.std}, {"n_folds", sm.n_folds}, {"n_subjects", sm.n_subjects}};
  nlohmann::json modes = nlohmann::json::array();
  for (const auto& [mode, _] : report.summary) modes.push_back(mode);
  return {{"modes", modes}, {"summary", summary}, {"subjects", subjects}};
}

namespace {

std::string cell(const MetricsReport& r, const std::string& mode, const std::string& metric) {
  auto m = r.summary.find(mode);
  if (m == r.summary.end()) return "-";
  auto v = m->second.find(metric);
  if (v == m->second.end()) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * v->second.mean, 100.0 * v->second.std);
  return buf;
}

}  // namespace

std::string to_markdown(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  os << "| Method | mAP (%) BM | mAP (%) NBM | F1 (%) BM | F1 (%) NBM | clDice (%) BM | clDice (%) NBM | Brain DSC (%) |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& [label, r] : rows) {
    os << "| " << label;
    for (const char* metric : {"vessel_ap", "vessel_f1", "vessel_cldice"})
      for (const char* mode : {"BM", "NBM"}) os << " | " << cell(r, mode, metric);
    std::string brain = cell(r, "NBM", "brain_dsc");
    if (brain == "-") brain = cell(r, "BM", "brain_dsc");
    os << " | " << brain << " |\n";
  }
  return os.str();
}

std::string to_markdown(const MetricsReport& report, const std::string& label) { return to_markdown({{label, report}}); }

}  // namespace jobvs
