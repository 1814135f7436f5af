#include <algorithm>
#include <cmath>

#include "plcgrid/error.hpp"
#include "plcgrid/stateseq.hpp"

namespace plcgrid::stateseq {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::mismatch01:
      return "mismatch01";
    case Metric::centroid_euclidean:
      return "centroid_euclidean";
    case Metric::centroid_cosine:
      return "centroid_cosine";
  }
  return "mismatch01";
}

Metric parse_metric(std::string_view name) {
  if (name == "mismatch01") return Metric::mismatch01;
  if (name == "centroid_euclidean") return Metric::centroid_euclidean;
  if (name == "centroid_cosine") return Metric::centroid_cosine;
  throw InvalidArgument("unknown DTW metric '" + std::string(name) + "'");
}

SymbolDistance::SymbolDistance(Metric metric, const std::map<int, std::vector<double>>& centroids)
    : metric_(metric) {
  if (metric == Metric::mismatch01) return;
  if (centroids.empty()) throw InvalidArgument("centroid metric needs centroids");
  double largest = 0.0;
  for (const auto& [la, ca] : centroids) {
    for (const auto& [lb, cb] : centroids) {
      if (lb <= la) continue;
      double d = 0.0;
      if (metric == Metric::centroid_euclidean) {
        for (std::size_t i = 0; i < ca.size(); ++i) d += (ca[i] - cb[i]) * (ca[i] - cb[i]);
        d = std::sqrt(d);
      } else {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < ca.size(); ++i) {
          dot += ca[i] * cb[i];
          na += ca[i] * ca[i];
          nb += cb[i] * cb[i];
        }
        d = (na > 0.0 && nb > 0.0) ? 1.0 - dot / std::sqrt(na * nb) : 1.0;
        d = std::max(d, 0.0);
      }
      table_[{la, lb}] = d;
      largest = std::max(largest, d);
    }
  }
  unknown_ = largest > 0.0 ? largest : 1.0;
}

double SymbolDistance::operator()(int a, int b) const {
  if (a == b) return 0.0;
  if (metric_ == Metric::mismatch01) return 1.0;
  auto it = table_.find({std::min(a, b), std::max(a, b)});
  return it == table_.end() ? unknown_ : it->second;
}

DtwResult dtw(std::span<const int> a, std::span<const int> b, const SymbolDistance& dist) {
  if (a.empty() || b.empty()) throw InvalidArgument("dtw: empty sequence");
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<double> acc(n * m);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * m + j]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double local = dist(a[i], b[j]);
      if (i == 0 && j == 0) {
        at(i, j) = local;
      } else if (i == 0) {
        at(i, j) = local + at(i, j - 1);
      } else if (j == 0) {
        at(i, j) = local + at(i - 1, j);
      } else {
        at(i, j) = local + std::min({at(i - 1, j - 1), at(i - 1, j), at(i, j - 1)});
      }
    }
  }
  DtwResult r;
  r.cost = at(n - 1, m - 1);
  std::size_t i = n - 1;
  std::size_t j = m - 1;
  r.path.push_back({i, j});
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = at(i - 1, j - 1);
      const double up = at(i - 1, j);
      const double left = at(i, j - 1);
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    }
    r.path.push_back({i, j});
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

double dtw_cost(std::span<const int> a, std::span<const int> b, const SymbolDistance& dist,
                double abandon_above) {
  if (a.empty() || b.empty()) throw InvalidArgument("dtw: empty sequence");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  // A path leaves the block of the two leading runs only after crossing at
  // least min(p, q) of its cells; likewise it enters the trailing block. The
  // two blocks share no cell when they are disjoint along either axis.
  {
    auto run = [](std::span<const int> s, bool from_front) {
      std::size_t k = 1;
      if (from_front) {
        while (k < s.size() && s[k] == s[0]) ++k;
      } else {
        while (k < s.size() && s[s.size() - 1 - k] == s.back()) ++k;
      }
      return k;
    };
    const std::size_t pa = run(a, true), qb = run(b, true);
    const std::size_t pa_end = run(a, false), qb_end = run(b, false);
    const double head = dist(a.front(), b.front()) * static_cast<double>(std::min(pa, qb));
    const double tail = dist(a.back(), b.back()) * static_cast<double>(std::min(pa_end, qb_end));
    const bool disjoint = pa + pa_end <= n || qb + qb_end <= m;
    if ((disjoint ? head + tail : std::max(head, tail)) > abandon_above) return kInf;
  }

  // Local costs through a small table over the symbols actually present.
  std::vector<int> sym_a(a.begin(), a.end()), sym_b(b.begin(), b.end());
  std::sort(sym_a.begin(), sym_a.end());
  sym_a.erase(std::unique(sym_a.begin(), sym_a.end()), sym_a.end());
  std::sort(sym_b.begin(), sym_b.end());
  sym_b.erase(std::unique(sym_b.begin(), sym_b.end()), sym_b.end());
  auto index_in = [](const std::vector<int>& syms, int s) {
    return static_cast<std::size_t>(std::lower_bound(syms.begin(), syms.end(), s) - syms.begin());
  };
  std::vector<double> table(sym_a.size() * sym_b.size());
  for (std::size_t x = 0; x < sym_a.size(); ++x) {
    for (std::size_t y = 0; y < sym_b.size(); ++y) table[x * sym_b.size() + y] = dist(sym_a[x], sym_b[y]);
  }
  std::vector<std::size_t> bi(m);
  for (std::size_t j = 0; j < m; ++j) bi[j] = index_in(sym_b, b[j]);

  // Every element is matched at least once, at no less than its cheapest
  // partner in the other sequence.
  {
    std::vector<double> min_row(sym_a.size(), kInf), min_col(sym_b.size(), kInf);
    for (std::size_t x = 0; x < sym_a.size(); ++x) {
      for (std::size_t y = 0; y < sym_b.size(); ++y) {
        min_row[x] = std::min(min_row[x], table[x * sym_b.size() + y]);
        min_col[y] = std::min(min_col[y], table[x * sym_b.size() + y]);
      }
    }
    double lb_a = 0.0, lb_b = 0.0;
    for (int s : a) lb_a += min_row[index_in(sym_a, s)];
    for (std::size_t j = 0; j < m; ++j) lb_b += min_col[bi[j]];
    if (std::max(lb_a, lb_b) > abandon_above) return kInf;
  }

  // Cells above the bound cannot lie on a path that ends within it (local
  // costs are non-negative), so each row only spans the columns still alive.
  std::vector<double> prev(m, kInf), cur(m, kInf);
  std::size_t plo = 0, phi = 0;
  {
    const double* row = table.data() + index_in(sym_a, a[0]) * sym_b.size();
    double acc = 0.0;
    std::size_t j = 0;
    for (; j < m; ++j) {
      acc += row[bi[j]];
      if (acc > abandon_above) break;
      prev[j] = acc;
    }
    if (j == 0) return kInf;
    phi = j - 1;
  }
  for (std::size_t i = 1; i < n; ++i) {
    const double* row = table.data() + index_in(sym_a, a[i]) * sym_b.size();
    std::size_t lo = m, hi = 0;
    for (std::size_t j = plo; j < m; ++j) {
      double best = j <= phi ? prev[j] : kInf;
      if (j > plo) {
        best = std::min(best, cur[j - 1]);
        if (j - 1 <= phi) best = std::min(best, prev[j - 1]);
      }
      double v = row[bi[j]] + best;
      if (v > abandon_above) v = kInf;
      cur[j] = v;
      if (v != kInf) {
        lo = std::min(lo, j);
        hi = j;
      } else if (j > phi) {
        break;
      }
    }
    if (lo == m) return kInf;
    // Stale values outside [lo, hi] are never read: reads are range-checked.
    std::swap(prev, cur);
    plo = lo;
    phi = hi;
  }
  return phi == m - 1 ? prev[m - 1] : kInf;
}

RunLengths run_lengths(std::span<const int> seq) {
  RunLengths r;
  for (int s : seq) {
    if (r.symbols.empty() || r.symbols.back() != s) {
      r.symbols.push_back(s);
      r.lengths.push_back(0);
    }
    ++r.lengths.back();
  }
  return r;
}

double run_path_cost(const RunLengths& a, const RunLengths& b, const SymbolDistance& dist) {
  if (a.symbols.empty() || b.symbols.empty()) throw InvalidArgument("run_path_cost: empty sequence");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::size_t k = a.symbols.size();
  const std::size_t l = b.symbols.size();
  // best[i][j]: runs [0, i) of a and [0, j) of b covered by whole groups.
  // Within a group the longer side is walked once per element; the shorter
  // side's surplus steps sit on its cheapest run.
  std::vector<double> best((k + 1) * (l + 1), kInf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return best[i * (l + 1) + j]; };
  at(0, 0) = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      const double base = at(i, j);
      if (base == kInf) continue;
      double cost = 0.0, span = 0.0, cheapest = kInf;
      for (std::size_t j2 = j; j2 < l; ++j2) {
        const double d = dist(a.symbols[i], b.symbols[j2]);
        cost += d * static_cast<double>(b.lengths[j2]);
        span += static_cast<double>(b.lengths[j2]);
        cheapest = std::min(cheapest, d);
        const double v = base + cost + std::max(0.0, static_cast<double>(a.lengths[i]) - span) * cheapest;
        at(i + 1, j2 + 1) = std::min(at(i + 1, j2 + 1), v);
      }
      cost = 0.0, span = 0.0, cheapest = kInf;
      for (std::size_t i2 = i; i2 < k; ++i2) {
        const double d = dist(a.symbols[i2], b.symbols[j]);
        cost += d * static_cast<double>(a.lengths[i2]);
        span += static_cast<double>(a.lengths[i2]);
        cheapest = std::min(cheapest, d);
        const double v = base + cost + std::max(0.0, static_cast<double>(b.lengths[j]) - span) * cheapest;
        at(i2 + 1, j + 1) = std::min(at(i2 + 1, j + 1), v);
      }
    }
  }
  return at(k, l);
}

}  // namespace plcgrid::stateseq
