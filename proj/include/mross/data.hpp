/*
 * Copyright 2026 The MROSS Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Dataset streams: the six synthetic simulation designs, CSV ingestion and an
// in-memory view. Every stream is single-consumer, replayable through reset().

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mross/loss.hpp"
#include "mross/rng.hpp"

namespace mross {

/// Up to `cols` consecutive points as a column-major d x cols block. Valid
/// until the next call on the stream that produced it.
struct ChunkView {
  const double* x = nullptr;
  const int* y = nullptr;
  Eigen::Index dim = 0;
  Eigen::Index cols = 0;

  Eigen::Map<const Matrix> features() const { return {x, dim, cols}; }
  LabeledPoint point(Eigen::Index j) const { return {features().col(j), y[j]}; }
};

class DatasetStream {
 public:
  virtual ~DatasetStream() = default;
  /// Feature dimension including the intercept.
  virtual std::size_t dim() const = 0;
  /// Number of points a full traversal produces.
  virtual std::size_t size_hint() const = 0;
  /// Writes the next point into `out`; false once exhausted. `out` is reused
  /// by callers, so implementations must fully overwrite it.
  virtual bool next(LabeledPoint& out) = 0;
  virtual void reset() = 0;

  /// Next block of at most `max_cols` points; returns its width (0 at the
  /// end). The default copies from next() into an internal buffer.
  virtual Eigen::Index next_chunk(Eigen::Index max_cols, ChunkView& out) {
    const auto d = static_cast<Eigen::Index>(dim());
    if (chunk_x_.rows() != d || chunk_x_.cols() < max_cols) chunk_x_.resize(d, max_cols);
    chunk_y_.resize(static_cast<std::size_t>(max_cols));
    Eigen::Index m = 0;
    while (m < max_cols && next(chunk_point_)) {
      chunk_x_.col(m) = chunk_point_.x;
      chunk_y_[static_cast<std::size_t>(m)] = chunk_point_.y;
      ++m;
    }
    out = {chunk_x_.data(), chunk_y_.data(), d, m};
    return m;
  }

 private:
  Matrix chunk_x_;
  std::vector<int> chunk_y_;
  LabeledPoint chunk_point_;
};

/// Reads the next k points (fewer if the stream ends first).
inline std::vector<LabeledPoint> take(DatasetStream& stream, std::size_t k) {
  std::vector<LabeledPoint> out;
  out.reserve(k);
  LabeledPoint p;
  while (out.size() < k && stream.next(p)) out.push_back(p);
  return out;
}

inline std::vector<LabeledPoint> materialize(DatasetStream& stream) {
  return take(stream, stream.size_hint());
}

/// Points stored column-major: x is d x n, y has n labels.
struct PointTable {
  Matrix x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x.rows()); }
  LabeledPoint point(std::size_t i) const { return {x.col(static_cast<Eigen::Index>(i)), y[i]}; }

  /// Points [begin, end) as separate records.
  std::vector<LabeledPoint> points(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw std::out_of_range("point table: bad range");
    std::vector<LabeledPoint> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(point(i));
    return out;
  }

  static PointTable from(const std::vector<LabeledPoint>& points) {
    PointTable t;
    if (points.empty()) return t;
    const auto d = points.front().x.size();
    t.x.resize(d, static_cast<Eigen::Index>(points.size()));
    t.y.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i].x.size() != d) throw std::invalid_argument("point table: ragged dimensions");
      t.x.col(static_cast<Eigen::Index>(i)) = points[i].x;
      t.y.push_back(points[i].y);
    }
    return t;
  }
};

/// Drains the stream into a table (reserving size_hint() columns).
inline PointTable materialize_table(DatasetStream& stream) {
  PointTable t;
  const auto d = static_cast<Eigen::Index>(stream.dim());
  const auto hint = static_cast<Eigen::Index>(stream.size_hint());
  t.x.resize(d, hint);
  t.y.reserve(static_cast<std::size_t>(hint));
  Eigen::Index used = 0;
  ChunkView ch;
  while (stream.next_chunk(1024, ch) > 0) {
    if (used + ch.cols > t.x.cols()) t.x.conservativeResize(d, std::max(2 * t.x.cols(), used + ch.cols));
    t.x.middleCols(used, ch.cols) = ch.features();
    t.y.insert(t.y.end(), ch.y, ch.y + ch.cols);
    used += ch.cols;
  }
  t.x.conservativeResize(d, used);
  return t;
}

/// A view [begin, end) over a shared in-memory table; chunks are zero-copy.
class MemoryStream final : public DatasetStream {
 public:
  explicit MemoryStream(const std::vector<LabeledPoint>& points)
      : MemoryStream(std::make_shared<const PointTable>(PointTable::from(points))) {}
  explicit MemoryStream(PointTable table) : MemoryStream(std::make_shared<const PointTable>(std::move(table))) {}

  explicit MemoryStream(std::shared_ptr<const PointTable> table, std::size_t begin = 0,
                        std::size_t end = static_cast<std::size_t>(-1))
      : table_(std::move(table)), begin_(begin), end_(std::min(end, table_->size())), pos_(begin_) {
    if (begin_ > end_) throw std::invalid_argument("memory stream: begin past end");
  }

  std::size_t dim() const override { return table_->dim(); }
  std::size_t size_hint() const override { return end_ - begin_; }
  bool next(LabeledPoint& out) override {
    if (pos_ >= end_) return false;
    out.x = table_->x.col(static_cast<Eigen::Index>(pos_));
    out.y = table_->y[pos_];
    ++pos_;
    return true;
  }
  Eigen::Index next_chunk(Eigen::Index max_cols, ChunkView& out) override {
    const auto m = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(max_cols), end_ - pos_));
    out = {table_->x.data() + static_cast<Eigen::Index>(pos_) * table_->x.rows(), table_->y.data() + pos_,
           table_->x.rows(), m};
    pos_ += static_cast<std::size_t>(m);
    return m;
  }
  void reset() override { pos_ = begin_; }

  const std::shared_ptr<const PointTable>& storage() const { return table_; }

 private:
  std::shared_ptr<const PointTable> table_;
  std::size_t begin_;
  std::size_t end_;
  std::size_t pos_;
};

// ---------------------------------------------------------------------------
// Synthetic designs

struct CaseSpec {
  int case_id = 1;
  std::size_t n = 0;
  std::size_t d = 21;  // including the intercept
  std::uint64_t seed = 0;

  void validate() const {
    if (case_id < 1 || case_id > 6) {
      throw std::invalid_argument("unknown case_id " + std::to_string(case_id) + " (expected 1..6)");
    }
    if (n < 1) throw std::invalid_argument("case spec: n must be at least 1");
    if (d < 2) throw std::invalid_argument("case spec: d must be at least 2");
  }
};

/// Sigma_1 with entries 0.5^|i-j|.
inline Matrix ar1_covariance(std::size_t p, double rho = 0.5) {
  Matrix s(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      s(i, j) = std::pow(rho, std::abs(static_cast<double>(i) - static_cast<double>(j)));
  return s;
}

/// Sigma_2 with unit diagonal and 0.5 elsewhere.
inline Matrix equicorrelated_covariance(std::size_t p, double rho = 0.5) {
  Matrix s = Matrix::Constant(p, p, rho);
  s.diagonal().setOnes();
  return s;
}

/// (0, 0.5, ..., 0.5): the generating parameter of the logistic designs 1-3.
inline Vector logistic_design_theta(std::size_t d) {
  Vector t = Vector::Constant(d, 0.5);
  t(0) = 0.0;
  return t;
}

inline Matrix cholesky_factor(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols()) throw std::invalid_argument("covariance must be square");
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("covariance is not symmetric positive definite");
  return llt.matrixL();
}

/// mu + z * sqrt(df / w), z ~ N(0, L L'), w ~ chi-square(df). Pass the
/// Cholesky factor to avoid refactorizing per draw.
template <class Rng>
Vector sample_mvt_chol(double df, const Vector& mu, const Matrix& chol, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector z(mu.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  std::chi_squared_distribution<double> chi(df);
  const double w = chi(rng);
  return mu + (chol.template triangularView<Eigen::Lower>() * z) * std::sqrt(df / w);
}

template <class Rng>
Vector sample_mvt(double df, const Vector& mu, const Matrix& sigma, Rng& rng) {
  if (!(df > 0.0)) throw std::invalid_argument("degrees of freedom must be positive");
  if (sigma.rows() != mu.size()) throw std::invalid_argument("mean and covariance sizes differ");
  return sample_mvt_chol(df, mu, cholesky_factor(sigma), rng);
}

class SyntheticStream final : public DatasetStream {
 public:
  explicit SyntheticStream(const CaseSpec& spec) : spec_(spec), rng_(0) {
    spec_.validate();
    const std::size_t p = spec_.d - 1;
    chol1_ = cholesky_factor(ar1_covariance(p));
    chol2_ = cholesky_factor(equicorrelated_covariance(p));
    theta_t_ = logistic_design_theta(spec_.d);
    const std::size_t h = p / 2;
    auto block = [&](double a, double b) {
      Vector m(p);
      m.head(h).setConstant(a);
      m.tail(p - h).setConstant(b);
      return m;
    };
    // Case 4 class means
    mu_pos_ = Vector::Constant(p, 0.5);
    mu_neg_ = Vector::Constant(p, -0.5);
    if (spec_.case_id == 5) {
      mix_pos_ = {block(0, 1), block(-1, 2), Vector::Constant(p, -1.0)};
      mix_neg_ = {block(0, -1), block(1, -2), block(1, 2)};
    } else if (spec_.case_id == 6) {
      mu_pos_ = block(0, 1);
      mu_neg_ = block(0, -1);
    }
    reset();
  }

  std::size_t dim() const override { return spec_.d; }
  std::size_t size_hint() const override { return spec_.n; }
  const CaseSpec& spec() const { return spec_; }

  void reset() override {
    rng_ = CounterRng(derive_seed(spec_.seed, "data", {static_cast<std::uint64_t>(spec_.case_id), spec_.d}));
    normal_.reset();
    produced_ = 0;
  }

  bool next(LabeledPoint& out) override {
    if (produced_ >= spec_.n) return false;
    const std::size_t p = spec_.d - 1;
    out.x.resize(spec_.d);
    out.x(0) = 1.0;
    auto features = out.x.tail(p);
    switch (spec_.case_id) {
      case 1:
      case 2:
      case 3: {
        const Matrix* chol = &chol1_;
        if (spec_.case_id == 2 && uniform() < 0.5) chol = &chol2_;
        gaussian(*chol, features);
        if (spec_.case_id == 3) features *= std::sqrt(3.0 / chi_square(3.0));
        const double eta = out.x.dot(theta_t_);
        out.y = uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1 : -1;
        break;
      }
      case 4: {
        out.y = produced_ % 2 == 0 ? 1 : -1;
        gaussian(out.y > 0 ? chol1_ : chol2_, features);
        features += out.y > 0 ? mu_pos_ : mu_neg_;
        break;
      }
      case 5: {
        out.y = produced_ % 2 == 0 ? 1 : -1;
        const double u = uniform();
        const std::size_t comp = u < 0.5 ? 0 : (u < 0.75 ? 1 : 2);
        gaussian(chol1_, features);
        features += out.y > 0 ? mix_pos_[comp] : mix_neg_[comp];
        break;
      }
      case 6: {
        out.y = uniform() < 0.8 ? 1 : -1;
        gaussian(chol1_, features);
        features *= std::sqrt(3.0 / chi_square(3.0));
        features += out.y > 0 ? mu_pos_ : mu_neg_;
        break;
      }
      default:
        throw std::logic_error("unreachable case id");
    }
    ++produced_;
    return true;
  }

 private:
  double uniform() { return rng_.uniform(); }

  double chi_square(double df) { return std::chi_squared_distribution<double>(df)(rng_); }

  template <class Out>
  void gaussian(const Matrix& chol, Out&& out) {
    z_.resize(chol.rows());
    for (Eigen::Index i = 0; i < z_.size(); ++i) z_(i) = normal_(rng_);
    out.noalias() = chol.triangularView<Eigen::Lower>() * z_;
  }

  CaseSpec spec_;
  CounterRng rng_;
  std::normal_distribution<double> normal_;
  Matrix chol1_, chol2_;
  Vector theta_t_, mu_pos_, mu_neg_, z_;
  std::vector<Vector> mix_pos_, mix_neg_;
  std::size_t produced_ = 0;
};

inline SyntheticStream gen_case(const CaseSpec& spec) { return SyntheticStream(spec); }

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    fields.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace detail

/// Comma-separated numeric rows with an optional header line. The label
/// column may hold {-1,+1} or {0,1}; 0 is mapped to -1.
class CsvStream final : public DatasetStream {
 public:
  CsvStream(std::string path, std::size_t label_column, bool add_intercept)
      : path_(std::move(path)), label_column_(label_column), add_intercept_(add_intercept) {
    std::ifstream in(path_);
    if (!in) throw std::runtime_error("cannot open CSV file '" + path_ + "'");
    std::string line;
    std::size_t line_no = 0;
    LabeledPoint p;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      if (line_no == 1 && !numeric_row(line)) {
        has_header_ = true;
        continue;
      }
      parse_row(line, line_no, p);
      if (rows_ == 0) dim_ = static_cast<std::size_t>(p.x.size());
      ++rows_;
    }
    if (rows_ == 0) throw std::runtime_error("CSV file '" + path_ + "' has no data rows");
    reset();
  }

  std::size_t dim() const override { return dim_; }
  std::size_t size_hint() const override { return rows_; }
  bool has_header() const { return has_header_; }

  void reset() override {
    in_ = std::make_unique<std::ifstream>(path_);
    if (!*in_) throw std::runtime_error("cannot reopen CSV file '" + path_ + "'");
    line_no_ = 0;
  }

  bool next(LabeledPoint& out) override {
    std::string line;
    while (std::getline(*in_, line)) {
      ++line_no_;
      if (detail::trim(line).empty() || (line_no_ == 1 && has_header_)) continue;
      parse_row(line, line_no_, out);
      return true;
    }
    return false;
  }

 private:
  // A header needs a nonempty non-numeric field; empty fields are data errors.
  static bool numeric_row(const std::string& line) {
    double v;
    for (auto f : detail::split_commas(line))
      if (!detail::trim(f).empty() && !detail::parse_double(f, v)) return false;
    return true;
  }

  void parse_row(const std::string& line, std::size_t line_no, LabeledPoint& out) const {
    const auto fields = detail::split_commas(line);
    const std::string where = "CSV '" + path_ + "' line " + std::to_string(line_no) + ": ";
    if (label_column_ >= fields.size()) throw std::runtime_error(where + "missing label column");
    if (dim_ != 0 && fields.size() - 1 + (add_intercept_ ? 1 : 0) != dim_) {
      throw std::runtime_error(where + "expected " + std::to_string(dim_ + 1 - (add_intercept_ ? 1 : 0)) +
                               " fields, found " + std::to_string(fields.size()));
    }
    if (fields.size() < 2) throw std::runtime_error(where + "missing field (need a label and a feature)");
    double label;
    if (!detail::parse_double(fields[label_column_], label)) {
      throw std::runtime_error(where + "label is not numeric");
    }
    if (label == 1.0) {
      out.y = 1;
    } else if (label == -1.0 || label == 0.0) {
      out.y = -1;
    } else {
      throw std::runtime_error(where + "label must be in {-1,+1} or {0,1}");
    }
    const std::size_t d = fields.size() - 1 + (add_intercept_ ? 1 : 0);
    out.x.resize(static_cast<Eigen::Index>(d));
    Eigen::Index k = 0;
    if (add_intercept_) out.x(k++) = 1.0;
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (j == label_column_) continue;
      double v;
      if (!detail::parse_double(fields[j], v)) {
        throw std::runtime_error(where + "field " + std::to_string(j + 1) + " is missing or not a finite number");
      }
      out.x(k++) = v;
    }
    if (!add_intercept_ && out.x(0) != 1.0) {
      throw std::runtime_error(where + "first feature must be the intercept 1 (or enable add_intercept)");
    }
  }

  std::string path_;
  std::size_t label_column_;
  bool add_intercept_;
  bool has_header_ = false;
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::size_t line_no_ = 0;
  std::unique_ptr<std::ifstream> in_;
};

inline CsvStream read_csv(const std::string& path, std::size_t label_column = 0, bool add_intercept = true) {
  return CsvStream(path, label_column, add_intercept);
}

}  // namespace mross
