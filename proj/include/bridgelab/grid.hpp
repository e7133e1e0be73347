#ifndef BRIDGELAB_GRID_HPP
#define BRIDGELAB_GRID_HPP

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bridgelab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kLogFloor = 1e-300;
inline constexpr double kDefaultMassFloor = 1e-12;

struct Grid {
    double lower = 0.0;
    double upper = 1.0;
    int n = 3;

    Grid() = default;
    Grid(double lo, double hi, int n_points) : lower(lo), upper(hi), n(n_points) {
        if (n < 3) throw std::invalid_argument("grid needs at least 3 points");
        if (!(upper > lower)) throw std::invalid_argument("grid upper must exceed lower");
    }

    double h() const { return (upper - lower) / (n - 1); }
    double point(int i) const { return lower + i * h(); }

    Vec points() const {
        Vec x(n);
        for (int i = 0; i < n; ++i) x[i] = point(i);
        return x;
    }

    // trapezoid weights: h interior, h/2 at the ends
    Vec weights() const {
        Vec w = Vec::Constant(n, h());
        w[0] *= 0.5;
        w[n - 1] *= 0.5;
        return w;
    }

    bool operator==(const Grid& o) const {
        return lower == o.lower && upper == o.upper && n == o.n;
    }
    bool operator!=(const Grid& o) const { return !(*this == o); }
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* where) {
    if (a != b) throw std::invalid_argument(std::string(where) + ": grid mismatch");
}

struct Field {
    Grid grid;
    Vec values;

    Field() = default;
    Field(const Grid& g, Vec v) : grid(g), values(std::move(v)) {
        if (values.size() != grid.n) throw std::invalid_argument("field length != grid points");
    }
    explicit Field(const Grid& g) : grid(g), values(Vec::Zero(g.n)) {}

    template <typename F>
    static Field sample(const Grid& g, F&& fn) {
        Vec v(g.n);
        for (int i = 0; i < g.n; ++i) v[i] = fn(g.point(i));
        return Field(g, std::move(v));
    }

    double operator[](int i) const { return values[i]; }
    int size() const { return grid.n; }
};

inline void require_finite(const Field& f, const char* where) {
    if (!f.values.allFinite()) throw std::invalid_argument(std::string(where) + ": non-finite input");
}

// probability density on the grid; normalized against trapezoid quadrature
struct Density {
    Grid grid;
    Vec values;

    Density() = default;
    Density(const Grid& g, Vec v, bool normalize = true) : grid(g), values(std::move(v)) {
        if (values.size() != grid.n) throw std::invalid_argument("density length != grid points");
        if ((values.array() < 0).any()) throw std::invalid_argument("density has negative values");
        if (normalize) {
            double mass = values.dot(grid.weights());
            if (!(mass > 0)) throw std::invalid_argument("density has zero mass");
            values /= mass;
        }
    }

    template <typename F>
    static Density sample(const Grid& g, F&& fn) {
        Vec v(g.n);
        for (int i = 0; i < g.n; ++i) v[i] = fn(g.point(i));
        return Density(g, std::move(v));
    }

    Field as_field() const { return Field(grid, values); }
    double operator[](int i) const { return values[i]; }
};

inline Density gaussian_density(const Grid& g, double mean, double variance) {
    return Density::sample(g, [&](double x) {
        return std::exp(-(x - mean) * (x - mean) / (2.0 * variance)) / std::sqrt(2.0 * M_PI * variance);
    });
}

// central differences interior, one-sided second order at the ends; exact on affine functions
inline Field gradient(const Field& f) {
    require_finite(f, "gradient");
    const int n = f.grid.n;
    const double h = f.grid.h();
    Vec g(n);
    for (int i = 1; i + 1 < n; ++i) g[i] = (f.values[i + 1] - f.values[i - 1]) / (2 * h);
    g[0] = (-3 * f.values[0] + 4 * f.values[1] - f.values[2]) / (2 * h);
    g[n - 1] = (3 * f.values[n - 1] - 4 * f.values[n - 2] + f.values[n - 3]) / (2 * h);
    return Field(f.grid, std::move(g));
}

// second difference interior, copy-adjacent at the ends
inline Field laplacian(const Field& f) {
    require_finite(f, "laplacian");
    const int n = f.grid.n;
    const double h2 = f.grid.h() * f.grid.h();
    Vec l(n);
    for (int i = 1; i + 1 < n; ++i) l[i] = (f.values[i + 1] - 2 * f.values[i] + f.values[i - 1]) / h2;
    l[0] = l[1];
    l[n - 1] = l[n - 2];
    return Field(f.grid, std::move(l));
}

inline double integrate(const Field& f) {  // against lebesgue
    return f.values.dot(f.grid.weights());
}

inline double integrate(const Field& f, const Density& mu) {
    require_same_grid(f.grid, mu.grid, "integrate");
    return (f.values.array() * mu.values.array()).matrix().dot(f.grid.weights());
}

inline double weighted_l2_norm(const Field& v, const Density& mu) {
    require_same_grid(v.grid, mu.grid, "weighted_l2_norm");
    double s = (v.values.array().square() * mu.values.array()).matrix().dot(v.grid.weights());
    return std::sqrt(std::max(s, 0.0));
}

inline Field log_field(const Vec& v, const Grid& g) {
    Vec out(v.size());
    for (int i = 0; i < v.size(); ++i) out[i] = std::log(std::max(v[i], kLogFloor));
    return Field(g, std::move(out));
}

inline Field log_of(const Density& d) { return log_field(d.values, d.grid); }

// points where the density is large enough for pointwise diagnostics
inline Eigen::Array<bool, Eigen::Dynamic, 1> support_mask(const Density& mu,
                                                          double mass_floor = kDefaultMassFloor) {
    return mu.values.array() > mass_floor;
}

inline double masked_weighted_l2_norm(const Field& v, const Density& mu,
                                      double mass_floor = kDefaultMassFloor) {
    require_same_grid(v.grid, mu.grid, "masked_weighted_l2_norm");
    const Vec w = v.grid.weights();
    double s = 0;
    for (int i = 0; i < v.size(); ++i)
        if (mu.values[i] > mass_floor) s += v.values[i] * v.values[i] * mu.values[i] * w[i];
    return std::sqrt(std::max(s, 0.0));
}

inline double masked_integrate(const Field& f, const Density& mu,
                               double mass_floor = kDefaultMassFloor) {
    require_same_grid(f.grid, mu.grid, "masked_integrate");
    const Vec w = f.grid.weights();
    double s = 0;
    for (int i = 0; i < f.size(); ++i)
        if (mu.values[i] > mass_floor) s += f.values[i] * mu.values[i] * w[i];
    return s;
}

}  // namespace bridgelab

#endif
