#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace invlearn {

// F(S) = sum_k w_k * c(S - a_k), c(x) = h[x]^+ + b[-x]^+, weights of any sign.
class KinkSum {
 public:
  KinkSum(double h, double b) : h_(h), b_(b) {}

  void add(double a, double w = 1.0) {
    terms_.emplace_back(a, w);
    sorted_ = false;
  }
  void clear() {
    terms_.clear();
    sorted_ = true;
  }
  std::size_t size() const { return terms_.size(); }

  double evaluate(double S) const {
    double v = 0.0;
    for (auto [a, w] : terms_) {
      double x = S - a;
      v += w * (x >= 0.0 ? h_ * x : -b_ * x);
    }
    return v;
  }

  // Values at ascending points, O((n + m) log n).
  std::vector<double> evaluate_sorted(std::span<const double> points) const {
    sort();
    double wl = 0.0, al = 0.0, wr = 0.0, ar = 0.0;
    for (auto [a, w] : terms_) {
      wr += w;
      ar += w * a;
    }
    std::vector<double> out(points.size());
    std::size_t k = 0;
    for (std::size_t j = 0; j < points.size(); ++j) {
      double S = points[j];
      while (k < terms_.size() && terms_[k].first <= S) {
        auto [a, w] = terms_[k++];
        wl += w;
        al += w * a;
        wr -= w;
        ar -= w * a;
      }
      out[j] = h_ * (S * wl - al) + b_ * (ar - S * wr);
    }
    return out;
  }

  std::vector<double> kinks() const {
    sort();
    std::vector<double> k;
    k.reserve(terms_.size());
    for (auto [a, w] : terms_)
      if (k.empty() || k.back() != a) k.push_back(a);
    return k;
  }

  // Candidate points in [lo, hi]: endpoints and interior kinks, ascending.
  std::vector<double> candidates(double lo, double hi) const {
    std::vector<double> c;
    c.push_back(lo);
    for (double a : kinks())
      if (a > lo && a < hi) c.push_back(a);
    if (hi > lo) c.push_back(hi);
    return c;
  }

 private:
  void sort() const {
    if (sorted_) return;
    std::sort(terms_.begin(), terms_.end());
    sorted_ = true;
  }

  double h_, b_;
  mutable std::vector<std::pair<double, double>> terms_;
  mutable bool sorted_ = true;
};

inline double tie_tolerance(double v) { return 1e-9 * std::max(1.0, std::abs(v)); }

// Index of the first value within tolerance of the minimum.
inline std::size_t first_argmin(std::span<const double> v) {
  double m = *std::min_element(v.begin(), v.end());
  double tol = tie_tolerance(m);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] <= m + tol) return i;
  return 0;
}

}  // namespace invlearn
