#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mldcn {

// Row-major table of categorical ids, one column per field.
struct IdTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> ids;

  IdTable() = default;
  IdTable(std::size_t r, std::size_t c) : rows(r), cols(c), ids(r * c, 0) {}

  std::uint32_t& operator()(std::size_t i, std::size_t j) { return ids[i * cols + j]; }
  std::uint32_t operator()(std::size_t i, std::size_t j) const { return ids[i * cols + j]; }

  std::span<const std::uint32_t> row(std::size_t i) const { return {ids.data() + i * cols, cols}; }

  std::vector<std::uint32_t> column(std::size_t j) const {
    std::vector<std::uint32_t> c(rows);
    for (std::size_t i = 0; i < rows; ++i) c[i] = (*this)(i, j);
    return c;
  }

  friend bool operator==(const IdTable&, const IdTable&) = default;
};

}  // namespace mldcn
