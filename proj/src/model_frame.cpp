#include "varexp/model_frame.hpp"

#include <Eigen/QR>
#include <limits>
#include <utility>

namespace varexp {

namespace {

const Column& require_column(const Dataset& data, const std::string& name) {
  const Column* col = data.find(name);
  if (!col) throw ModelFrameError("unknown column '" + name + "'");
  return *col;
}

const Eigen::VectorXd& require_numeric(const Dataset& data,
                                       const std::string& name,
                                       const char* role) {
  const Column& col = require_column(data, name);
  if (!col.is_numeric()) {
    throw ModelFrameError("column '" + name + "' is categorical but is used as " +
                          role);
  }
  return col.numeric();
}

const CategoricalColumn& require_categorical(const Dataset& data,
                                             const std::string& name) {
  const Column& col = require_column(data, name);
  if (!col.is_numeric()) return col.categorical();
  throw ModelFrameError("column '" + name +
                        "' is numeric but is used as a grouping factor; pass a "
                        "categorical type hint if the codes are group labels");
}

// Full column rank of [1 X] via column-pivoted QR with the documented
// threshold.
void check_rank(const Eigen::MatrixXd& x, Eigen::Index n) {
  Eigen::MatrixXd xt(n, x.cols() + 1);
  xt.col(0).setOnes();
  if (x.cols() > 0) xt.rightCols(x.cols()) = x;
  double max_norm = 0.0;
  for (Eigen::Index j = 0; j < xt.cols(); ++j) {
    max_norm = std::max(max_norm, xt.col(j).norm());
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xt);
  qr.setThreshold(static_cast<double>(n) *
                  std::numeric_limits<double>::epsilon() * max_norm);
  if (qr.rank() < xt.cols()) {
    throw ModelFrameError(
        "fixed-effect design [1 X] is rank deficient (rank " +
        std::to_string(qr.rank()) + " of " + std::to_string(xt.cols()) + ")");
  }
}

void finalize(ModelFrame& frame) {
  frame.n = frame.y.size();
  frame.k = frame.x.cols();
  frame.r = static_cast<Eigen::Index>(frame.blocks.size());
  frame.p = frame.z.cols();
  if (frame.n <= frame.k + 1) {
    throw ModelFrameError("need n > k + 1 residual degrees of freedom, got n = " +
                          std::to_string(frame.n) + ", k = " +
                          std::to_string(frame.k));
  }
  for (const auto& b : frame.blocks) {
    if (b.cols < 1) {
      throw ModelFrameError("random-effect block '" + b.label +
                            "' has no columns");
    }
  }
  check_rank(frame.x, frame.n);
}

}  // namespace

ModelFrame build_model_frame(const Dataset& data, const FormulaAst& ast) {
  ModelFrame frame;
  const Eigen::Index n = data.n_rows;

  frame.y_name = ast.response;
  frame.y = require_numeric(data, ast.response, "the response");

  frame.x.resize(n, static_cast<Eigen::Index>(ast.fixed_terms.size()));
  for (std::size_t j = 0; j < ast.fixed_terms.size(); ++j) {
    frame.x.col(static_cast<Eigen::Index>(j)) =
        require_numeric(data, ast.fixed_terms[j], "a fixed effect");
    frame.x_names.push_back(ast.fixed_terms[j]);
  }

  Eigen::Index total_cols = 0;
  std::vector<Eigen::MatrixXd> block_mats;
  for (const auto& spec : ast.random_specs) {
    const CategoricalColumn& group = require_categorical(data, spec.group);
    const auto n_levels = static_cast<Eigen::Index>(group.levels.size());
    if (n_levels < 1) {
      throw ModelFrameError("grouping column '" + spec.group + "' has no levels");
    }

    BlockInfo info;
    info.group = spec.group;
    info.slope = spec.slope_terms.front();
    info.offset = total_cols;
    info.cols = n_levels;

    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(n, n_levels);
    if (info.slope == "1") {
      info.label = "(Intercept) | " + spec.group;
      for (Eigen::Index i = 0; i < n; ++i) {
        block(i, group.codes[static_cast<std::size_t>(i)]) = 1.0;
      }
    } else {
      info.label = info.slope + " | " + spec.group;
      const Eigen::VectorXd& slope =
          require_numeric(data, info.slope, "a random slope");
      for (Eigen::Index i = 0; i < n; ++i) {
        block(i, group.codes[static_cast<std::size_t>(i)]) = slope[i];
      }
    }
    block_mats.push_back(std::move(block));
    frame.blocks.push_back(std::move(info));
    total_cols += n_levels;
  }

  frame.z.resize(n, total_cols);
  for (std::size_t i = 0; i < block_mats.size(); ++i) {
    frame.z.middleCols(frame.blocks[i].offset, frame.blocks[i].cols) =
        block_mats[i];
  }

  finalize(frame);
  return frame;
}

ModelFrame make_model_frame(Eigen::VectorXd y, Eigen::MatrixXd x,
                            std::vector<Eigen::MatrixXd> z_blocks,
                            std::vector<std::string> x_names,
                            std::vector<std::string> block_labels) {
  ModelFrame frame;
  const Eigen::Index n = y.size();
  if (x.rows() != n) {
    throw ModelFrameError("X has " + std::to_string(x.rows()) + " rows, y has " +
                          std::to_string(n));
  }
  frame.y = std::move(y);
  frame.y_name = "y";
  frame.x = std::move(x);

  if (x_names.empty()) {
    for (Eigen::Index j = 0; j < frame.x.cols(); ++j) {
      x_names.push_back("x" + std::to_string(j + 1));
    }
  }
  if (static_cast<Eigen::Index>(x_names.size()) != frame.x.cols()) {
    throw ModelFrameError("x_names size does not match X columns");
  }
  frame.x_names = std::move(x_names);

  Eigen::Index total_cols = 0;
  for (std::size_t i = 0; i < z_blocks.size(); ++i) {
    if (z_blocks[i].rows() != n) {
      throw ModelFrameError("Z block " + std::to_string(i + 1) + " has " +
                            std::to_string(z_blocks[i].rows()) + " rows, y has " +
                            std::to_string(n));
    }
    BlockInfo info;
    info.label = i < block_labels.size() ? block_labels[i]
                                         : "z" + std::to_string(i + 1);
    info.offset = total_cols;
    info.cols = z_blocks[i].cols();
    total_cols += info.cols;
    frame.blocks.push_back(std::move(info));
  }
  frame.z.resize(n, total_cols);
  for (std::size_t i = 0; i < z_blocks.size(); ++i) {
    frame.z.middleCols(frame.blocks[i].offset, frame.blocks[i].cols) =
        z_blocks[i];
  }

  finalize(frame);
  return frame;
}

}  // namespace varexp
