#include "mbmpc/blocking.hpp"

#include <numeric>

namespace mbmpc {

BlockingPattern::BlockingPattern(std::vector<int> lengths, int N)
    : block_lengths(std::move(lengths)), horizon(N) {
    if (block_lengths.empty())
        throw ParameterError("BlockingPattern: no blocks");
    for (int len : block_lengths)
        if (len < 1) throw ParameterError("BlockingPattern: block length < 1");
    const int total =
        std::accumulate(block_lengths.begin(), block_lengths.end(), 0);
    if (total != N)
        throw ParameterError("BlockingPattern: block lengths do not sum to N");
}

int BlockingPattern::block_of(int k) const {
    int acc = 0;
    for (int j = 0; j < num_blocks(); ++j) {
        acc += block_lengths[j];
        if (k < acc) return j;
    }
    throw ParameterError("BlockingPattern: step index outside horizon");
}

int BlockingPattern::block_start(int j) const {
    int acc = 0;
    for (int i = 0; i < j; ++i) acc += block_lengths[i];
    return acc;
}

BlockingPattern uniform_pattern(int N, int M) {
    if (M < 1 || M > N)
        throw ParameterError("uniform_pattern: need 1 <= M <= N");
    std::vector<int> lengths(M, N / M);
    for (int j = 0; j < N % M; ++j) lengths[j] += 1;
    return BlockingPattern(std::move(lengths), N);
}

Matrix blocking_matrix(const BlockingPattern& pattern) {
    Matrix B = Matrix::Zero(pattern.horizon, pattern.num_blocks());
    int row = 0;
    for (int j = 0; j < pattern.num_blocks(); ++j)
        for (int i = 0; i < pattern.block_lengths[j]; ++i) B(row++, j) = 1.0;
    return B;
}

bool is_admissible(const Matrix& blocking) {
    const int rows = static_cast<int>(blocking.rows());
    const int cols = static_cast<int>(blocking.cols());
    if (rows < 1 || cols < 1) return false;
    int prev_col = -1;
    for (int r = 0; r < rows; ++r) {
        int ones = 0;
        int col = -1;
        for (int c = 0; c < cols; ++c) {
            const double v = blocking(r, c);
            if (v == 1.0) {
                ++ones;
                col = c;
            } else if (v != 0.0) {
                return false;
            }
        }
        if (ones != 1) return false;
        if (r == 0 && col != 0) return false;
        if (r > 0 && col != prev_col && col != prev_col + 1) return false;
        prev_col = col;
    }
    return prev_col == cols - 1;  // every column hosts a block
}

InputSequence expand(const BlockingPattern& pattern,
                     const BlockedSequence& blocked) {
    if (blocked.num_blocks() != pattern.num_blocks())
        throw DimensionError("expand: blocked sequence does not match pattern");
    InputSequence full;
    full.reserve(pattern.horizon);
    for (int j = 0; j < pattern.num_blocks(); ++j)
        for (int i = 0; i < pattern.block_lengths[j]; ++i)
            full.push_back(blocked.entries[j]);
    return full;
}

InputSequence expand_offset(const BlockingPattern& pattern,
                            const BlockedSequence& blocked,
                            const InputSequence& warmstart, double lambda) {
    if (static_cast<int>(warmstart.size()) != pattern.horizon)
        throw DimensionError("expand_offset: warm-start length != horizon");
    InputSequence full = expand(pattern, blocked);
    for (int k = 0; k < pattern.horizon; ++k) full[k] += lambda * warmstart[k];
    return full;
}

std::vector<SparseRow> offset_bound_rows(const BlockingPattern& pattern,
                                         const InputSequence& warmstart,
                                         const Box& input_box) {
    if (static_cast<int>(warmstart.size()) != pattern.horizon)
        throw DimensionError("offset_bound_rows: warm-start length != horizon");
    if (!input_box.lower.allFinite() || !input_box.upper.allFinite())
        throw ParameterError("offset_bound_rows: input box must be compact");
    const int m = input_box.dim();
    const int lambda_col = pattern.num_blocks() * m;
    std::vector<SparseRow> rows;
    rows.reserve(static_cast<std::size_t>(pattern.horizon) * m);
    int k = 0;
    for (int j = 0; j < pattern.num_blocks(); ++j) {
        for (int i = 0; i < pattern.block_lengths[j]; ++i, ++k) {
            for (int d = 0; d < m; ++d) {
                SparseRow row;
                row.terms = {{j * m + d, 1.0}, {lambda_col, warmstart[k][d]}};
                row.lower = input_box.lower[d];
                row.upper = input_box.upper[d];
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

}  // namespace mbmpc
