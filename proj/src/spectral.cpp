#include "branchlens/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace branchlens::spectral {

ActivationMatrix center(const ActivationMatrix& m) {
    if (m.rows == 0 || m.cols == 0)
        throw Error(ErrorCode::DimensionMismatch, "cannot center an empty matrix");
    ActivationMatrix out = m;
    for (std::size_t r = 0; r < m.rows; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) mean += m.at(r, c);
        mean /= static_cast<double>(m.cols);
        for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(r, c) - mean;
    }
    return out;
}

SquareMatrix covariance(const ActivationMatrix& centered) {
    if (centered.cols < 2)
        throw Error(ErrorCode::DegenerateSampleCount,
                    "covariance needs at least 2 columns, got " + std::to_string(centered.cols));
    const std::size_t d = centered.rows;
    const double scale = 1.0 / static_cast<double>(centered.cols - 1);

    SquareMatrix c;
    c.n = d;
    c.a.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const double* ri = &centered.values[i * centered.cols];
        for (std::size_t j = i; j < d; ++j) {
            const double* rj = &centered.values[j * centered.cols];
            double acc = 0.0;
            for (std::size_t t = 0; t < centered.cols; ++t) acc += ri[t] * rj[t];
            acc *= scale;
            // Filled from one triangle: the result is its own symmetrization.
            c.at(i, j) = acc;
            c.at(j, i) = acc;
        }
    }
    return c;
}

static double frobenius(const SquareMatrix& m) {
    double s = 0.0;
    for (double v : m.a) s += v * v;
    return std::sqrt(s);
}

EigenDecomposition eig_sym(const SquareMatrix& c) {
    const std::size_t n = c.n;
    if (n == 0 || c.a.size() != n * n)
        throw Error(ErrorCode::DimensionMismatch, "eig_sym needs a non-empty square matrix");

    const double fro = frobenius(c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(c.at(i, j) - c.at(j, i)) > 1e-10 * std::max(1.0, fro))
                throw Error(ErrorCode::NotSymmetric, "matrix is not symmetric");

    SquareMatrix a = c;
    // Work on the exact symmetrization so both triangles agree bit-for-bit.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = 0.5 * (a.at(i, j) + a.at(j, i));
            a.at(i, j) = v;
            a.at(j, i) = v;
        }

    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    const double target = 1e-12 * fro;
    bool converged = false;
    for (int sweep = 0; sweep < 100 && !converged; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * a.at(i, j) * a.at(i, j);
        if (std::sqrt(off) <= target) { converged = true; break; }

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a.at(p, q);
                if (apq == 0.0) continue;
                double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double cs = 1.0 / std::sqrt(t * t + 1.0);
                double sn = t * cs;

                double app = a.at(p, p), aqq = a.at(q, q);
                a.at(p, p) = app - t * apq;
                a.at(q, q) = aqq + t * apq;
                a.at(p, q) = 0.0;
                a.at(q, p) = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (i == p || i == q) continue;
                    double aip = a.at(i, p), aiq = a.at(i, q);
                    a.at(i, p) = cs * aip - sn * aiq;
                    a.at(p, i) = a.at(i, p);
                    a.at(i, q) = sn * aip + cs * aiq;
                    a.at(q, i) = a.at(i, q);
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vip = v[i * n + p], viq = v[i * n + q];
                    v[i * n + p] = cs * vip - sn * viq;
                    v[i * n + q] = sn * vip + cs * viq;
                }
            }
        }
    }
    if (!converged) {
        // Final check: the last sweep may have landed under the target.
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * a.at(i, j) * a.at(i, j);
        if (std::sqrt(off) > target)
            throw Error(ErrorCode::NoConvergence, "Jacobi sweeps exhausted without convergence");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return a.at(x, x) > a.at(y, y);
    });

    EigenDecomposition out;
    out.n = n;
    out.eigenvalues.resize(n);
    out.eigenvectors.resize(n * n);
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = a.at(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors[i * n + j] = v[i * n + order[j]];
    }
    return out;
}

SpectralSignature signature(const ActivationMatrix& m, int k) {
    if (k < 1) throw Error(ErrorCode::InvalidConfig, "signature needs k >= 1");
    EigenDecomposition eig = eig_sym(covariance(center(m)));

    SpectralSignature sig;
    sig.component = m.component;
    sig.k = k;
    sig.values.assign(static_cast<std::size_t>(k), 0.0);
    const double lambda_max = eig.eigenvalues.empty() ? 0.0 : eig.eigenvalues.front();
    const double clamp_floor = -1e-10 * std::max(1.0, lambda_max);
    for (std::size_t i = 0; i < std::min<std::size_t>(k, eig.eigenvalues.size()); ++i) {
        double lambda = eig.eigenvalues[i];
        if (lambda < 0.0 && lambda >= clamp_floor) lambda = 0.0;
        sig.values[i] = lambda;
    }
    return sig;
}

MetaFeatureVector meta_vector(const std::map<ComponentId, SpectralSignature>& signatures,
                              const Layout& layout) {
    int k = -1;
    MetaFeatureVector out;
    for (const auto& comp : layout.components) {
        auto it = signatures.find(comp);
        if (it == signatures.end())
            throw Error(ErrorCode::MissingComponent, "no signature for component " + comp.str());
        const SpectralSignature& sig = it->second;
        if (k < 0) k = sig.k;
        if (sig.k != k || sig.values.size() != static_cast<std::size_t>(k))
            throw Error(ErrorCode::InconsistentK,
                        "component " + comp.str() + " has k=" + std::to_string(sig.k) +
                            ", expected " + std::to_string(k));
        out.values.insert(out.values.end(), sig.values.begin(), sig.values.end());
    }
    return out;
}

}  // namespace branchlens::spectral
