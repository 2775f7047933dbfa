#pragma once

#include <cmath>
#include <cstdint>

#include "cablevae/model.hpp"
#include "cablevae/rng.hpp"
#include "cablevae/tabular.hpp"

namespace testing {

using namespace cablevae;

// Two continuous plus three categorical columns.
inline Schema small_schema() {
  return Schema{{ColumnSpec::continuous("a", Transform::kZScore),
                 ColumnSpec::continuous("b", Transform::kLog1pZScore),
                 ColumnSpec::categorical("p", {"x", "y"}),
                 ColumnSpec::categorical("q", {"u", "v", "w"}),
                 ColumnSpec::categorical("r", {"0", "1", "2", "3"})}};
}

// Continuous b depends on p so models have some structure to learn.
inline TabularDataset small_dataset(std::size_t rows, std::uint64_t seed) {
  TabularDataset ds(small_schema(), rows);
  Rng rng(seed);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t p = rng.index(2);
    ds.set(i, 0, rng.normal(1.0, 2.0));
    ds.set(i, 1, std::exp(rng.normal(p == 0 ? 2.0 : 3.0, 0.3)));
    ds.set(i, 2, double(p));
    ds.set(i, 3, double(rng.index(3)));
    ds.set(i, 4, double((p + rng.index(2)) % 4));
  }
  return ds;
}

inline Tensor normal_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

}  // namespace testing
