#pragma once

// Minimal linear-predictor formulas: "1 + C + T + C:T", "C*T", "0 + Z".
// The intercept is implicit unless a "0" or "-1" term removes it, and
// "a*b" expands to a + b + a:b. A leading "lhs ~" is accepted and ignored.

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "powerlik/errors.hpp"

namespace powerlik {

// Product of columns; an empty factor list is the intercept.
struct Term {
  std::vector<std::string> factors;

  bool is_intercept() const { return factors.empty(); }

  std::string name() const {
    if (factors.empty()) return "(Intercept)";
    std::string out = factors.front();
    for (std::size_t i = 1; i < factors.size(); ++i) out += ":" + factors[i];
    return out;
  }

  bool references(std::string_view column) const {
    return std::find(factors.begin(), factors.end(), column) != factors.end();
  }

  friend bool operator==(const Term&, const Term&) = default;
};

class Formula {
 public:
  Formula() = default;
  explicit Formula(std::vector<Term> terms) : terms_(std::move(terms)) {}

  static Formula parse(std::string_view text);

  const std::vector<Term>& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }
  bool empty() const { return terms_.empty(); }

  std::vector<std::string> term_names() const {
    std::vector<std::string> out;
    out.reserve(terms_.size());
    for (const auto& t : terms_) out.push_back(t.name());
    return out;
  }

  // Every column mentioned by any term, in first-appearance order.
  std::vector<std::string> columns() const {
    std::vector<std::string> out;
    for (const auto& t : terms_)
      for (const auto& f : t.factors)
        if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
    return out;
  }

  bool references(std::string_view column) const {
    return std::any_of(terms_.begin(), terms_.end(),
                       [&](const Term& t) { return t.references(column); });
  }

  // Index of the term whose factor set equals `factors` (order-insensitive).
  std::ptrdiff_t find(std::vector<std::string> factors) const {
    std::sort(factors.begin(), factors.end());
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      auto f = terms_[i].factors;
      std::sort(f.begin(), f.end());
      if (f == factors) return static_cast<std::ptrdiff_t>(i);
    }
    return -1;
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      if (i) out += " + ";
      out += terms_[i].is_intercept() ? "1" : terms_[i].name();
    }
    if (terms_.empty() || !terms_.front().is_intercept()) out = out.empty() ? "0" : "0 + " + out;
    return out;
  }

  friend bool operator==(const Formula&, const Formula&) = default;

 private:
  std::vector<Term> terms_;
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace detail

inline Formula Formula::parse(std::string_view text) {
  if (auto tilde = text.find('~'); tilde != std::string_view::npos) text = text.substr(tilde + 1);

  // Rewrite "a - 1" as "a + -1" so that a single split on '+' suffices.
  std::string normalized;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) continue;
    if (ch == '-') normalized += "+-";
    else normalized += ch;
  }

  bool intercept = true;
  std::vector<Term> terms;
  auto add = [&](std::vector<std::string> factors) {
    std::vector<std::string> key = factors;
    std::sort(key.begin(), key.end());
    for (const auto& t : terms) {
      auto k = t.factors;
      std::sort(k.begin(), k.end());
      if (k == key) return;
    }
    terms.push_back(Term{std::move(factors)});
  };

  for (const auto& raw : detail::split(normalized, '+')) {
    if (raw.empty()) continue;
    if (raw == "1") continue;
    if (raw == "0" || raw == "-1") {
      intercept = false;
      continue;
    }
    if (raw.front() == '-') throw ConfigError("formula: only '-1' may be subtracted, got '" + raw + "'");

    if (raw.find('*') != std::string::npos) {
      // a*b*c expands to every non-empty subset product, lower orders first.
      auto parts = detail::split(raw, '*');
      for (const auto& p : parts)
        if (p.empty() || p.find(':') != std::string::npos)
          throw ConfigError("formula: malformed product term '" + raw + "'");
      const std::size_t k = parts.size();
      for (std::size_t order = 1; order <= k; ++order) {
        for (unsigned mask = 1; mask < (1u << k); ++mask) {
          if (static_cast<std::size_t>(__builtin_popcount(mask)) != order) continue;
          std::vector<std::string> f;
          for (std::size_t j = 0; j < k; ++j)
            if (mask & (1u << j)) f.push_back(parts[j]);
          add(std::move(f));
        }
      }
      continue;
    }

    auto factors = detail::split(raw, ':');
    for (const auto& f : factors)
      if (f.empty()) throw ConfigError("formula: empty factor in '" + raw + "'");
    add(std::move(factors));
  }

  if (intercept) terms.insert(terms.begin(), Term{});
  return Formula(std::move(terms));
}

}  // namespace powerlik
