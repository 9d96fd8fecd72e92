#pragma once

// Text form of tensors.
//
// rank 1: elements on one line, space separated
// rank 2: one row per line
// rank >= 3: for each trailing index tuple (first varying fastest), a label
//            line "[:,:,i2,...]" followed by that rank-2 block
// empty:  "[empty]"

#include <cstddef>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "arx/tensor.hpp"

namespace arx {

inline constexpr std::string_view kEmptyMarker = "[empty]";

namespace detail {

template <class T>
void print_block(std::ostream& os, const T* base, std::size_t rows,
                 std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    if (i) os << '\n';
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) os << ' ';
      os << base[i + j * rows];
    }
  }
}

}  // namespace detail

template <class T, std::size_t k>
std::ostream& operator<<(std::ostream& os, const Tensor<T, k>& t) {
  if (t.empty()) return os << kEmptyMarker;
  if constexpr (k == 1) {
    detail::print_block(os, t.data(), 1, t.size());
  } else if constexpr (k == 2) {
    // Row traversal: outer along dimension 0, inner along dimension 1.
    auto& m = const_cast<Tensor<T, k>&>(t);
    bool first_row = true;
    for (auto row = m.template dbegin<0>(); row != m.template dend<0>(); ++row) {
      if (!first_row) os << '\n';
      first_row = false;
      bool first = true;
      for (auto it = m.template dbegin<1>(row); it != m.template dend<1>(row);
           ++it) {
        if (!first) os << ' ';
        first = false;
        os << *it;
      }
    }
  } else {
    const std::size_t rows = t.extent(0), cols = t.extent(1);
    const std::size_t block = rows * cols;
    std::array<std::size_t, k> idx{};
    for (std::size_t off = 0; off < t.size(); off += block) {
      if (off) os << '\n';
      os << "[:,:";
      for (std::size_t d = 2; d < k; ++d) os << ',' << idx[d];
      os << "]\n";
      detail::print_block(os, t.data() + off, rows, cols);
      for (std::size_t d = 2; d < k; ++d) {
        if (++idx[d] < t.extent(d)) break;
        idx[d] = 0;
      }
    }
  }
  return os;
}

template <class T, std::size_t k>
std::string format(const Tensor<T, k>& t) {
  std::ostringstream os;
  os.precision(17);
  os << t;
  return os.str();
}

/// Parses the rank-1 or rank-2 text form produced by format().
template <class T, std::size_t k>
  requires(k == 1 || k == 2)
Tensor<T, k> parse(const std::string& text) {
  if (text == kEmptyMarker) return Tensor<T, k>(0);
  std::vector<std::vector<T>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    std::vector<T> row;
    std::string tok;
    while (fields >> tok) {
      std::size_t used = 0;
      T v = static_cast<T>(std::stod(tok, &used));
      if (used != tok.size())
        throw std::invalid_argument("not a number: '" + tok + "'");
      row.push_back(v);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) return Tensor<T, k>(0);
  if constexpr (k == 1) {
    if (rows.size() != 1)
      throw std::invalid_argument("vector text must be a single line");
    Tensor<T, 1> v(rows[0].size());
    std::copy(rows[0].begin(), rows[0].end(), v.begin());
    return v;
  } else {
    const std::size_t m = rows.size(), n = rows[0].size();
    Tensor<T, 2> a(m, n);
    for (std::size_t i = 0; i < m; ++i) {
      if (rows[i].size() != n)
        throw std::domain_error("ragged matrix text at row " +
                                std::to_string(i));
      for (std::size_t j = 0; j < n; ++j) a(i, j) = rows[i][j];
    }
    return a;
  }
}

}  // namespace arx
