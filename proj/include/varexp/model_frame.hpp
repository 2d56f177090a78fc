#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <vector>

#include "varexp/dataset.hpp"
#include "varexp/formula.hpp"

namespace varexp {

class ModelFrameError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BlockInfo {
  std::string slope;   // "1" for a random intercept
  std::string group;   // grouping column ("" for direct-API blocks)
  std::string label;   // display label, e.g. "(Intercept) | Subject"
  Eigen::Index offset = 0;
  Eigen::Index cols = 0;
};

// Immutable numeric design: y (n), X (n×k, no intercept column), and the
// concatenated random-effect design Z (n×p) with per-block extents.
// Shareable across threads after construction.
struct ModelFrame {
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  Eigen::MatrixXd z;
  std::vector<BlockInfo> blocks;
  std::vector<std::string> x_names;
  std::string y_name;
  Eigen::Index n = 0, k = 0, r = 0, p = 0;

  auto z_block(Eigen::Index i) const {
    return z.middleCols(blocks[i].offset, blocks[i].cols);
  }
};

// Formula-driven construction. Intercept blocks are one-hot with exact unit
// row sums; slope blocks are the one-hot indicators scaled elementwise by the
// slope column. Rejects unknown columns, categorical slopes/response/fixed
// terms, non-categorical groups, n <= k+1, and rank-deficient [1 X] (numerical
// rank with tolerance n*eps*max column norm).
ModelFrame build_model_frame(const Dataset& data, const FormulaAst& ast);

// Direct construction from numeric blocks (arbitrary Z, e.g. marker matrices).
ModelFrame make_model_frame(Eigen::VectorXd y, Eigen::MatrixXd x,
                            std::vector<Eigen::MatrixXd> z_blocks,
                            std::vector<std::string> x_names = {},
                            std::vector<std::string> block_labels = {});

}  // namespace varexp
