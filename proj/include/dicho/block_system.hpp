#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dicho/linalg.hpp"
#include "dicho/types.hpp"

namespace dicho {

/// x' = (A + B) x with A = diag(A_11..A_nn) and B holding the off-diagonal
/// coupling blocks A_ij (absent entry = zero block).
template <typename Scalar = double>
struct BlockSystem {
    std::vector<MatX<Scalar>> blocks;                      // A_ii
    std::map<std::pair<Index, Index>, MatX<Scalar>> couplings;  // (i,j) -> A_ij, i != j

    [[nodiscard]] Index block_count() const { return static_cast<Index>(blocks.size()); }

    [[nodiscard]] Index block_dim(Index i) const { return blocks[static_cast<std::size_t>(i)].rows(); }

    [[nodiscard]] Index total_dim() const {
        Index d = 0;
        for (const auto& b : blocks) d += b.rows();
        return d;
    }

    [[nodiscard]] Index block_offset(Index i) const {
        Index off = 0;
        for (Index k = 0; k < i; ++k) off += block_dim(k);
        return off;
    }

    void validate() const {
        if (blocks.empty()) throw ValidationError("BlockSystem: needs at least one block");
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (blocks[i].rows() != blocks[i].cols())
                throw ShapeError("BlockSystem: diagonal block " + std::to_string(i + 1) + " is not square");
            if (blocks[i].rows() == 0)
                throw ShapeError("BlockSystem: diagonal block " + std::to_string(i + 1) + " is empty");
            if (!all_finite(blocks[i]))
                throw ValidationError("BlockSystem: non-finite entries in block " + std::to_string(i + 1));
        }
        const Index n = block_count();
        for (const auto& [key, m] : couplings) {
            const auto [i, j] = key;
            if (i < 0 || i >= n || j < 0 || j >= n)
                throw ValidationError("BlockSystem: coupling index out of range");
            if (i == j) throw ValidationError("BlockSystem: diagonal coupling (i,i) is forbidden");
            if (m.rows() != block_dim(i) || m.cols() != block_dim(j))
                throw ShapeError("BlockSystem: coupling (" + std::to_string(i + 1) + "," +
                                 std::to_string(j + 1) + ") must be " + std::to_string(block_dim(i)) + "x" +
                                 std::to_string(block_dim(j)));
            if (!all_finite(m)) throw ValidationError("BlockSystem: non-finite coupling entries");
        }
    }

    [[nodiscard]] const MatX<Scalar>* coupling(Index i, Index j) const {
        auto it = couplings.find({i, j});
        return it == couplings.end() ? nullptr : &it->second;
    }

    /// Coupling-only application f_i = sum_{j != i} A_ij x_j for stacked x;
    /// accepts multiple columns at once.
    [[nodiscard]] MatX<Scalar> apply_coupling(const MatX<Scalar>& x) const {
        MatX<Scalar> f = MatX<Scalar>::Zero(x.rows(), x.cols());
        for (const auto& [key, m] : couplings) {
            const auto [i, j] = key;
            f.middleRows(block_offset(i), block_dim(i)).noalias() +=
                m * x.middleRows(block_offset(j), block_dim(j));
        }
        return f;
    }

    [[nodiscard]] BlockSystem with_scaled_couplings(Scalar lambda) const {
        BlockSystem out = *this;
        for (auto& [key, m] : out.couplings) m *= lambda;
        return out;
    }
};

/// Dense A + B on the full product space.
template <typename Scalar>
DenseOperator<Scalar> assemble_full(const BlockSystem<Scalar>& sys) {
    sys.validate();
    const Index d = sys.total_dim();
    MatX<Scalar> full = MatX<Scalar>::Zero(d, d);
    for (Index i = 0; i < sys.block_count(); ++i) {
        const Index off = sys.block_offset(i);
        full.block(off, off, sys.block_dim(i), sys.block_dim(i)) = sys.blocks[static_cast<std::size_t>(i)];
    }
    for (const auto& [key, m] : sys.couplings) {
        const auto [i, j] = key;
        full.block(sys.block_offset(i), sys.block_offset(j), sys.block_dim(i), sys.block_dim(j)) = m;
    }
    return DenseOperator<Scalar>(std::move(full));
}

/// Dense B alone (couplings in place, zero diagonal blocks).
template <typename Scalar>
MatX<Scalar> assemble_coupling(const BlockSystem<Scalar>& sys) {
    const Index d = sys.total_dim();
    MatX<Scalar> b = MatX<Scalar>::Zero(d, d);
    for (const auto& [key, m] : sys.couplings) {
        const auto [i, j] = key;
        b.block(sys.block_offset(i), sys.block_offset(j), sys.block_dim(i), sys.block_dim(j)) = m;
    }
    return b;
}

template <typename Scalar>
struct CouplingNorms {
    Scalar sum = 0;  // sum_{i != j} ||A_ij||
    Scalar max = 0;  // max_{i != j} ||A_ij||
};

template <typename Scalar>
CouplingNorms<Scalar> coupling_norms(const BlockSystem<Scalar>& sys) {
    CouplingNorms<Scalar> out;
    for (const auto& [key, m] : sys.couplings) {
        const Scalar nrm = operator_norm(m);
        out.sum += nrm;
        out.max = std::max(out.max, nrm);
    }
    return out;
}

}  // namespace dicho
