#pragma once

#include "mbmpc/types.hpp"

namespace mbmpc {

/// Partition of the horizon into contiguous blocks of constant input.
/// block_lengths sums to the horizon length N; M = block_lengths.size().
struct BlockingPattern {
    std::vector<int> block_lengths;
    int horizon = 0;

    BlockingPattern() = default;
    BlockingPattern(std::vector<int> lengths, int N);

    int num_blocks() const { return static_cast<int>(block_lengths.size()); }

    /// Index of the block containing horizon step k.
    int block_of(int k) const;

    /// First horizon step of block j.
    int block_start(int j) const;
};

/// Reduced-order input sequence, one entry per block.
struct BlockedSequence {
    InputSequence entries;

    int num_blocks() const { return static_cast<int>(entries.size()); }
};

/// One two-sided linear inequality lo <= sum_i coeff_i * v_i <= hi over the
/// stacked (blocked inputs, lambda) decision vector.
struct SparseRow {
    std::vector<std::pair<int, double>> terms;
    double lower = 0.0;
    double upper = 0.0;
};

/// Pattern with block lengths as equal as possible; when M does not divide N
/// the first (N mod M) blocks are one step longer.
BlockingPattern uniform_pattern(int N, int M);

/// Dense N x M zero-one matrix; column j is the indicator of block j.
/// Used by tests and admissibility checks only; hot paths expand by lengths.
Matrix blocking_matrix(const BlockingPattern& pattern);

/// True iff every row has exactly one 1 and the blocks appear contiguously
/// in column order (each new block indented by one column).
bool is_admissible(const Matrix& blocking);

/// Kronecker expansion (B (x) I_m) ub: each block entry repeated along its
/// block.
InputSequence expand(const BlockingPattern& pattern,
                     const BlockedSequence& blocked);

/// Offset parameterization: expand(blocked) + lambda * warmstart.
InputSequence expand_offset(const BlockingPattern& pattern,
                            const BlockedSequence& blocked,
                            const InputSequence& warmstart, double lambda);

/// Linear inequality rows over (ub, lambda) whose satisfaction is exactly
/// equivalent to the offset expansion lying in the input box at every
/// horizon step. Decision indexing: blocked entry (j, d) at column j*m + d,
/// lambda at column M*m.
std::vector<SparseRow> offset_bound_rows(const BlockingPattern& pattern,
                                         const InputSequence& warmstart,
                                         const Box& input_box);

}  // namespace mbmpc
