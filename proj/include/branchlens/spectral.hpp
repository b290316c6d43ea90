#pragma once

// Spectral feature extraction: per-component activation matrices are reduced
// to their top-k covariance eigenvalues, and per-sample signatures are
// concatenated in layout order into one meta-feature vector.

#include <map>
#include <vector>

#include "branchlens/dataio.hpp"

namespace branchlens::spectral {

// Dense symmetric matrix, row-major.
struct SquareMatrix {
    std::size_t n = 0;
    std::vector<double> a;  // n*n

    double at(std::size_t i, std::size_t j) const { return a[i * n + j]; }
    double& at(std::size_t i, std::size_t j) { return a[i * n + j]; }
};

struct EigenDecomposition {
    std::vector<double> eigenvalues;   // descending; ties keep input order
    std::vector<double> eigenvectors;  // column j pairs with eigenvalues[j], row-major n*n
    std::size_t n = 0;

    double vec(std::size_t i, std::size_t j) const { return eigenvectors[i * n + j]; }
};

struct SpectralSignature {
    ComponentId component;
    int k = 0;
    std::vector<double> values;  // length k, descending, zero-padded when D < k
};

struct MetaFeatureVector {
    std::vector<double> values;  // |components| * k, layout order
};

// Subtracts each row's mean: rows are feature channels, columns observations.
ActivationMatrix center(const ActivationMatrix& m);

// Unbiased covariance of a centered matrix: (1/(N-1)) * A * A^T, returned
// exactly symmetric. Requires N >= 2.
SquareMatrix covariance(const ActivationMatrix& centered);

// Cyclic Jacobi eigensolver for symmetric input. Sweeps until the
// off-diagonal Frobenius norm is <= 1e-12 * ||C||_F, capped at 100 sweeps.
EigenDecomposition eig_sym(const SquareMatrix& c);

// center -> covariance -> eig, keep the top k eigenvalues. Round-off
// negatives within -1e-10 * max(1, lambda_max) are clamped to zero.
SpectralSignature signature(const ActivationMatrix& m, int k);

// Concatenates signatures in layout component order.
MetaFeatureVector meta_vector(const std::map<ComponentId, SpectralSignature>& signatures,
                              const Layout& layout);

}  // namespace branchlens::spectral
