#pragma once

#include <cstddef>
#include <vector>

#include "cpvit/mask.hpp"
#include "cpvit/tensor.hpp"

namespace cpvit {

/// Running informativeness of every patch and head. Entries only grow, and
/// entries of pruned entities stay frozen at their prune-time value.
struct CumulativeScores {
    std::vector<double> patch;
    std::vector<double> head;
    std::size_t layers_accumulated = 0;

    static CumulativeScores zeros(std::size_t seq_len, std::size_t num_heads);

    friend bool operator==(const CumulativeScores&, const CumulativeScores&) = default;
};

struct ScoreDeltas {
    std::vector<double> patch;
    std::vector<double> head;
};

// Sum-based criteria over H x L x L attention. Used as the reference the
// max-criterion is checked against, not on the pruning path.

/// alpha * sum_i A_h[p, i] + beta * sum_j A_h[j, p]
double oracle_patch_informativeness(const Tensor& attention, std::size_t patch, std::size_t head, double alpha = 1.0,
                                    double beta = 1.0);

/// oracle_patch_informativeness summed over heads.
double oracle_layer_patch_informativeness(const Tensor& attention, std::size_t patch, double alpha = 1.0,
                                          double beta = 1.0);

/// sum_i sum_j A_h[i, j]
double oracle_head_informativeness(const Tensor& attention, std::size_t head);

/// Max-criterion for one layer. For every alive patch p,
/// patch[p] = sum over alive heads of max_i A[h, i, p], and for every alive
/// head h, head[h] = sum over alive patches of max_i A[h, i, p]. Pruned
/// entities get 0.
ScoreDeltas fast_scores(const Tensor& attention, const BinaryMask& alive_patches, const BinaryMask& alive_heads);

/// Elementwise add of `deltas`; bumps layers_accumulated.
CumulativeScores accumulate(const CumulativeScores& scores, const ScoreDeltas& deltas);

/// Literal reading of the head update: heads are visited in index order and
/// each adds the sum of the running patch scores after its own patch
/// contributions were added. Only alive entities change.
CumulativeScores accumulate_literal(const CumulativeScores& scores, const Tensor& attention,
                                    const BinaryMask& alive_patches, const BinaryMask& alive_heads);

/// Mean incoming attention per patch, averaged over heads and query rows.
std::vector<double> mean_incoming_attention(const Tensor& attention);

/// Partitions alive patches into `num_segments` rank bands of their mean
/// incoming attention, ascending. Segment sizes differ by at most one, with
/// the larger bands at the top. Ties break by index. An empty mask means all
/// patches are alive.
std::vector<std::vector<std::size_t>> segment_patches(const Tensor& attention, std::size_t num_segments = 3,
                                                      const BinaryMask& alive = {});

}  // namespace cpvit
