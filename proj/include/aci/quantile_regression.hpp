#pragma once

// Linear quantile regression.
//
// The fit solves the dual of the pinball-loss linear program
//
//     max_a  y'a   s.t.  X'a = (1 - p) X'1,  0 <= a <= 1
//
// with a Mehrotra predictor-corrector interior point method (the Frisch-Newton
// scheme). The regression coefficients are the negated multipliers of the
// equality constraints. X carries an intercept column and the covariates after
// standardisation; coefficients are mapped back to the raw scale on return.

#include "aci/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace aci {

inline double pinball_loss(double u, double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("pinball loss level must lie in (0, 1)");
    return u >= 0.0 ? p * u : (p - 1.0) * u;
}

struct QrModel {
    double level = 0.5;
    double intercept = 0.0;
    std::vector<double> coefficients;
    /// Set when the design was rank deficient and a small ridge term was added.
    bool regularized = false;
    std::size_t iterations = 0;

    double predict(std::span<const double> x) const {
        if (x.size() != coefficients.size()) throw DomainError("covariate dimension mismatch");
        double v = intercept;
        for (std::size_t j = 0; j < x.size(); ++j) v += coefficients[j] * x[j];
        return v;
    }

    template <class Derived>
    double predict(const Eigen::MatrixBase<Derived>& x) const {
        double v = intercept;
        for (Eigen::Index j = 0; j < x.size(); ++j) v += coefficients[static_cast<std::size_t>(j)] * x(j);
        return v;
    }
};

/// Mean pinball loss of responses - intercept - design * coefficients.
inline double pinball_objective(const Eigen::MatrixXd& design, std::span<const double> y, const QrModel& m) {
    if (static_cast<std::size_t>(design.rows()) != y.size()) throw DomainError("design/response size mismatch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < design.rows(); ++i)
        total += pinball_loss(y[static_cast<std::size_t>(i)] - m.predict(design.row(i)), m.level);
    return total / static_cast<double>(y.size());
}

struct QrOptions {
    std::size_t max_iterations = 100;
    double tolerance = 1e-10;
    double ridge = 1e-8;
};

namespace detail {

/// Largest step in [0, 1] keeping v + step * dv >= 0 elementwise.
inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
    double step = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0) step = std::min(step, -v[i] / dv[i]);
    return step;
}

}  // namespace detail

inline QrModel fit_quantile_regression(const Eigen::MatrixXd& design, std::span<const double> responses,
                                       double level, const QrOptions& opt = {}) {
    if (!(level > 0.0 && level < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
    const auto n = design.rows();
    const auto d = design.cols();
    if (static_cast<std::size_t>(n) != responses.size()) throw DomainError("design/response size mismatch");
    if (n < d + 1)
        throw NoDataError("quantile regression needs at least d + 1 = " + std::to_string(d + 1) + " rows");
    for (double v : responses)
        if (!std::isfinite(v)) throw DomainError("responses must be finite");
    if (!design.allFinite()) throw DomainError("design must be finite");

    // Standardised design with an intercept column.
    const Eigen::Index p = d + 1;
    Eigen::VectorXd mean = design.colwise().mean().transpose();
    Eigen::VectorXd scale(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double sd = std::sqrt((design.col(j).array() - mean[j]).square().mean());
        scale[j] = sd > 0.0 ? sd : 1.0;
    }
    Eigen::MatrixXd X(n, p);
    X.col(0).setOnes();
    for (Eigen::Index j = 0; j < d; ++j) X.col(j + 1) = (design.col(j).array() - mean[j]) / scale[j];

    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(responses.data(), n);
    double y_scale = y.cwiseAbs().mean();
    if (!(y_scale > 0.0)) y_scale = 1.0;
    y /= y_scale;

    QrModel model;
    model.level = level;
    model.coefficients.assign(static_cast<std::size_t>(d), 0.0);

    const Eigen::MatrixXd gram = X.transpose() * X;
    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        qr.setThreshold(1e-10);
        model.regularized = qr.rank() < p;
    }
    // Ridge relative to the largest diagonal entry of each system.
    const double ridge = model.regularized ? opt.ridge : 0.0;
    const auto with_ridge = [&](Eigen::MatrixXd m) {
        m.diagonal().array() += ridge * m.diagonal().maxCoeff();
        return m;
    };

    // LP data: min c'x  s.t.  A x = b, 0 <= x <= 1 with A = X', c = -y.
    const Eigen::VectorXd c = -y;
    const Eigen::VectorXd b = (1.0 - level) * X.transpose() * Eigen::VectorXd::Ones(n);

    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 - level);
    Eigen::VectorXd s = Eigen::VectorXd::Constant(n, level);
    Eigen::VectorXd yd = Eigen::LDLT<Eigen::MatrixXd>(with_ridge(gram)).solve(X.transpose() * c);
    Eigen::VectorXd r = c - X * yd;
    const double eps = std::max(1e-3 * r.cwiseAbs().mean(), 1e-8);
    Eigen::VectorXd z = r.cwiseMax(0.0).array() + eps;
    Eigen::VectorXd w = (-r).cwiseMax(0.0).array() + eps;

    const double nd = static_cast<double>(n);
    std::size_t it = 0;
    for (; it < opt.max_iterations; ++it) {
        const Eigen::VectorXd r1 = b - X.transpose() * x;
        const Eigen::VectorXd r2 = c - X * yd - z + w;
        const double gap = x.dot(z) + s.dot(w);
        const double primal = c.dot(x);
        if (gap / (1.0 + std::abs(primal)) < opt.tolerance && r1.lpNorm<Eigen::Infinity>() < 1e-8 &&
            r2.lpNorm<Eigen::Infinity>() < 1e-8)
            break;

        const Eigen::VectorXd q = (z.array() / x.array() + w.array() / s.array()).inverse().matrix();
        Eigen::MatrixXd normal = with_ridge(X.transpose() * q.asDiagonal() * X);
        if (!normal.allFinite()) throw NumericalError("quantile regression normal equations are not finite");
        Eigen::LLT<Eigen::MatrixXd> chol(normal);
        // Near the optimum the weights q span many orders of magnitude; rounding
        // can then cost positive definiteness, so retry with a growing jitter.
        const double top = normal.diagonal().maxCoeff();
        for (double jitter = 1e-14; chol.info() != Eigen::Success; jitter *= 100.0) {
            if (jitter > 1e-6) throw NumericalError("quantile regression normal equations are singular");
            normal.diagonal().array() += jitter * top;
            chol.compute(normal);
        }

        auto solve_direction = [&](const Eigen::VectorXd& rc1, const Eigen::VectorXd& rc2, Eigen::VectorXd& dx,
                                   Eigen::VectorXd& dyd, Eigen::VectorXd& dz, Eigen::VectorXd& dw) {
            const Eigen::VectorXd g = -r2.array() + rc1.array() / x.array() - rc2.array() / s.array();
            dyd = chol.solve(r1 - X.transpose() * (q.asDiagonal() * g));
            dx = q.asDiagonal() * (X * dyd + g);
            dz = (rc1.array() - z.array() * dx.array()) / x.array();
            dw = (rc2.array() + w.array() * dx.array()) / s.array();
        };

        // Predictor: pure Newton step towards complementarity zero.
        Eigen::VectorXd dx, dyd, dz, dw;
        solve_direction(-(x.cwiseProduct(z)), -(s.cwiseProduct(w)), dx, dyd, dz, dw);
        const Eigen::VectorXd ds = -dx;
        double ap = std::min(detail::max_step(x, dx), detail::max_step(s, ds));
        double ad = std::min(detail::max_step(z, dz), detail::max_step(w, dw));
        const double gap_aff = (x + ap * dx).dot(z + ad * dz) + (s + ap * ds).dot(w + ad * dw);
        const double sigma = std::pow(gap_aff / gap, 3.0);
        const double mu = sigma * gap / (2.0 * nd);

        // Corrector with centring.
        const Eigen::VectorXd rc1 = (mu - x.array() * z.array() - dx.array() * dz.array()).matrix();
        const Eigen::VectorXd rc2 = (mu - s.array() * w.array() - ds.array() * dw.array()).matrix();
        solve_direction(rc1, rc2, dx, dyd, dz, dw);
        const Eigen::VectorXd ds2 = -dx;
        ap = std::min(1.0, 0.99995 * std::min(detail::max_step(x, dx), detail::max_step(s, ds2)));
        ad = std::min(1.0, 0.99995 * std::min(detail::max_step(z, dz), detail::max_step(w, dw)));

        x += ap * dx;
        s += ap * ds2;
        yd += ad * dyd;
        z += ad * dz;
        w += ad * dw;
    }
    model.iterations = it;

    // beta in standardised coordinates, then back to the raw scale.
    const Eigen::VectorXd beta = -yd * y_scale;
    double intercept = beta[0];
    for (Eigen::Index j = 0; j < d; ++j) {
        const double coef = beta[j + 1] / scale[j];
        model.coefficients[static_cast<std::size_t>(j)] = coef;
        intercept -= coef * mean[j];
    }
    model.intercept = intercept;
    return model;
}

/// Intercept-only convenience overload.
inline QrModel fit_quantile_regression(std::span<const double> responses, double level, const QrOptions& opt = {}) {
    return fit_quantile_regression(Eigen::MatrixXd(static_cast<Eigen::Index>(responses.size()), 0), responses, level,
                                   opt);
}

}  // namespace aci
