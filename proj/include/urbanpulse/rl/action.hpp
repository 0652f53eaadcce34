#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

// Block-scaling action on the output head: W' = W * (1 + G a), b' = b * (1 + a_bias).
namespace urbanpulse::rl {

inline constexpr double kActionBound = 2.0;

// Binary rows x (blocks + 1) matrix. Column c < blocks selects the contiguous
// rows [c*rows/blocks, (c+1)*rows/blocks); the last column belongs to the bias
// and is empty.
class GroupingMatrix {
 public:
  explicit GroupingMatrix(std::size_t blocks = 32, std::size_t rows = 256) : rows_(rows), blocks_(blocks) {
    if (blocks != 8 && blocks != 16 && blocks != 32) throw std::invalid_argument("grouping: blocks must be 8, 16 or 32");
    if (rows % blocks != 0) throw std::invalid_argument("grouping: rows must divide evenly into blocks");
    block_of_.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) block_of_[r] = r / (rows / blocks);
  }

  std::size_t rows() const { return rows_; }
  std::size_t blocks() const { return blocks_; }
  std::size_t action_dim() const { return blocks_ + 1; }
  std::size_t block_of(std::size_t row) const { return block_of_.at(row); }
  int at(std::size_t row, std::size_t col) const { return col < blocks_ && block_of_.at(row) == col ? 1 : 0; }

 private:
  std::size_t rows_, blocks_;
  std::vector<std::size_t> block_of_;
};

inline std::vector<double> clamp_action(std::vector<double> a) {
  for (auto& v : a) v = std::clamp(v, -kActionBound, kActionBound);
  return a;
}

// In place. `a` must already be clamped.
inline void apply_action(std::vector<double>& weight, double& bias, const std::vector<double>& a, const GroupingMatrix& g) {
  if (weight.size() != g.rows() || a.size() != g.action_dim())
    throw std::invalid_argument("apply_action: head has " + std::to_string(weight.size()) + " weights and action " +
                                std::to_string(a.size()) + " entries; grouping expects " + std::to_string(g.rows()) +
                                " and " + std::to_string(g.action_dim()));
  for (std::size_t r = 0; r < weight.size(); ++r) weight[r] *= 1.0 + a[g.block_of(r)];
  bias *= 1.0 + a[g.blocks()];
}

}  // namespace urbanpulse::rl
