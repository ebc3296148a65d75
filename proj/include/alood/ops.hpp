#pragma once

#include <cstddef>
#include <vector>

#include "alood/tensor.hpp"

namespace alood {

/// y = x W + b with x [N x I], W [I x O], b [O].
Var affine(Tape& tape, Var x, Var weight, Var bias);

/// 3x3 cross-correlation, stride 1, zero padding 1.
/// x [Cin x H x W], kernels [Cout x Cin x 3 x 3], bias [Cout].
Var conv3x3_same(Tape& tape, Var x, Var kernels, Var bias);

enum class NormMode { kTrain, kEval };

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Running statistics of a batch-norm layer. `initialized` is false until
/// the first training step or a checkpoint load.
struct RunningStats {
  Tensor mean;
  Tensor var;
  bool initialized = false;

  static RunningStats fresh(std::size_t channels);
};

/// Per-channel normalization over the H x W plane of x [C x H x W].
/// Train mode normalizes with the plane statistics and updates `stats`;
/// eval mode normalizes with `stats`.
Var batchnorm2d(Tape& tape, Var x, Var gamma, Var beta, RunningStats& stats,
                NormMode mode, const BatchNormOptions& options = {});

Var relu(Tape& tape, Var x);

/// Per-channel global maximum of x [C x H x W] -> [C]. Ties route the
/// gradient to the first cell in row-major order.
Var adaptive_max_pool_global(Tape& tape, Var x);

Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var sum(Tape& tape, Var x);
Var reshape(Tape& tape, Var x, Shape shape);

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
};

/// Rows x[:, cell.row, cell.col] for each cell: [C x H x W] -> [N x C].
Var gather_cells(Tape& tape, Var x, const std::vector<Cell>& cells);

/// (1 - lambda) * obj + lambda * scene. `obj` is [C] or [N x C]; the scene
/// vector [C] is shared by every row.
Var fuse(Tape& tape, Var obj, Var scene, double lambda);

/// [N x P] ++ [N x Q] -> [N x (P + Q)].
Var concat_cols(Tape& tape, Var a, Var b);

/// Stacks [N_k x P] blocks into [sum N_k x P].
Var concat_rows(Tape& tape, const std::vector<Var>& parts);

}  // namespace alood
