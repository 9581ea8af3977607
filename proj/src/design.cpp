#include "mortgam/design.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <unordered_map>

namespace mortgam {

Eigen::Index ParametricCoding::width() const {
    const auto levels = static_cast<Eigen::Index>(ages.size());
    Eigen::Index w = 1;
    if (age) w += levels - 1;
    if (gender_age) w += levels;
    return w;
}

const DesignTerm& DesignRecipe::term(const std::string& name) const {
    for (const auto& t : terms) {
        if (t.name == name) return t;
    }
    throw Error(ErrorKind::Spec, fmt::format("no term named '{}'", name));
}

std::string factor_label(const FrameRow& row, const std::vector<std::string>& factors) {
    std::string label;
    for (const auto& f : factors) {
        if (!label.empty()) label += ':';
        if (f == "country") {
            label += row.country;
        } else if (f == "gender") {
            label += to_string(row.gender);
        } else if (f == "age") {
            label += std::to_string(row.age);
        } else {
            throw Error(ErrorKind::Spec, fmt::format("unknown factor '{}'", f));
        }
    }
    return label;
}

double covariate_value(const FrameRow& row, const std::string& name) {
    if (name == "kt") return row.kt;
    if (name == "kct") return row.kct;
    if (name == "cohort") return row.cohort;
    if (name == "age") return row.age;
    if (name == "year") return row.year;
    throw Error(ErrorKind::Spec, fmt::format("unknown covariate '{}'", name));
}

namespace {

std::vector<double> covariate_column(const ModelFrame& frame, const std::string& name) {
    std::vector<double> x;
    x.reserve(frame.size());
    for (const auto& r : frame.rows) x.push_back(covariate_value(r, name));
    return x;
}

Factor factor_column(const ModelFrame& frame, const std::vector<std::string>& factors) {
    std::vector<std::string> labels;
    labels.reserve(frame.size());
    for (const auto& r : frame.rows) labels.push_back(factor_label(r, factors));
    return Factor::from_labels(labels);
}

SmoothBlock build_block(const ModelFrame& frame, const SmoothTermSpec& s, double epsilon) {
    switch (s.kind) {
    case SmoothKind::CenteredShrinkage1d:
        return center_constraint(shrinkage_modify(crs_basis(covariate_column(frame, s.covariate), s.k), epsilon));
    case SmoothKind::ByShrinkage1d: {
        auto base = center_constraint(shrinkage_modify(crs_basis(covariate_column(frame, s.covariate), s.k), epsilon));
        return by_interaction(base, factor_column(frame, s.factors));
    }
    case SmoothKind::RandomEffect:
        return re_basis(factor_column(frame, s.factors));
    case SmoothKind::FactorSmooth:
        return fs_basis(covariate_column(frame, s.covariate), factor_column(frame, s.factors), s.k, s.m);
    }
    throw Error(ErrorKind::Spec, "unknown smooth kind");
}

void check_parametric_rank(const Eigen::SparseMatrix<double>& X, Eigen::Index width) {
    const Eigen::SparseMatrix<double> Xp = X.leftCols(width);
    const Eigen::MatrixXd G = Eigen::MatrixXd(Xp.transpose() * Xp);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().maxCoeff();
    if (!(eig.eigenvalues().minCoeff() > 1e-10 * top)) {
        throw Error(ErrorKind::Coding, "parametric block (age, gender:age) is rank deficient on this frame");
    }
}

} // namespace

std::vector<DesignPenalty> penalties_of(const DesignRecipe& recipe) {
    std::vector<DesignPenalty> out;
    int index = 0;
    for (std::size_t t = 0; t < recipe.terms.size(); ++t) {
        const auto& term = recipe.terms[t];
        for (const auto& pen : term.block.penalties) {
            out.push_back({static_cast<int>(t), term.first + pen.offset, Penalty{pen.matrix, 0, pen.replicate}, index++});
        }
    }
    return out;
}

Design assemble_design(const ModelFrame& frame, const ModelSpec& spec) {
    spec.validate();
    if (frame.empty()) throw Error(ErrorKind::Spec, "cannot assemble a design on an empty frame");

    DesignRecipe recipe;
    recipe.spec = spec;
    for (auto p : spec.parametric) {
        if (p == ParametricTerm::Age) recipe.coding.age = true;
        if (p == ParametricTerm::GenderAge) recipe.coding.gender_age = true;
    }
    if (recipe.coding.age) {
        for (const auto& r : frame.rows) recipe.coding.ages.push_back(r.age);
        std::sort(recipe.coding.ages.begin(), recipe.coding.ages.end());
        recipe.coding.ages.erase(std::unique(recipe.coding.ages.begin(), recipe.coding.ages.end()),
                                 recipe.coding.ages.end());
    }

    Eigen::Index next = 0;
    auto add_parametric = [&](std::string name, Eigen::Index width) {
        DesignTerm t;
        t.name = std::move(name);
        t.first = next;
        t.width = width;
        recipe.terms.push_back(std::move(t));
        next += width;
    };
    const auto n_ages = static_cast<Eigen::Index>(recipe.coding.ages.size());
    add_parametric("(Intercept)", 1);
    if (recipe.coding.age) add_parametric("age", n_ages - 1);
    if (recipe.coding.gender_age) add_parametric("gender:age", n_ages);

    for (const auto& s : spec.smooths) {
        DesignTerm t;
        t.name = s.name;
        t.smooth = true;
        t.spec = s;
        t.block = build_block(frame, s, spec.shrinkage_epsilon);
        t.first = next;
        t.width = t.block.width();
        t.block.columns.resize(0, t.width);
        t.block.columns.data().squeeze();
        next += t.width;
        recipe.terms.push_back(std::move(t));
    }
    recipe.cols = next;

    Design design;
    design.X = rows_for(recipe, frame);
    design.X.makeCompressed();
    design.y.resize(static_cast<Eigen::Index>(frame.size()));
    for (std::size_t i = 0; i < frame.size(); ++i) design.y(static_cast<Eigen::Index>(i)) = frame.rows[i].y;

    std::vector<Eigen::Index> nnz(design.cols(), 0);
    for (Eigen::Index j = 0; j < design.X.outerSize(); ++j) {
        nnz[j] = design.X.outerIndexPtr()[j + 1] - design.X.outerIndexPtr()[j];
    }
    for (const auto& t : recipe.terms) {
        for (Eigen::Index j = t.first; j < t.first + t.width; ++j) {
            if (nnz[j] == 0) {
                throw Error(t.smooth ? ErrorKind::Rank : ErrorKind::Coding,
                            fmt::format("term '{}' has an all-zero column ({})", t.name, j - t.first));
            }
        }
    }
    check_parametric_rank(design.X, recipe.coding.width());

    design.recipe = std::move(recipe);
    design.penalties = penalties_of(design.recipe);
    return design;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> rows_for(const DesignRecipe& recipe, const ModelFrame& frame) {
    const auto& coding = recipe.coding;
    std::unordered_map<int, Eigen::Index> age_code;
    for (std::size_t a = 0; a < coding.ages.size(); ++a) age_code[coding.ages[a]] = static_cast<Eigen::Index>(a);
    const Eigen::Index age_first = 1;
    const Eigen::Index gender_age_first = coding.age ? static_cast<Eigen::Index>(coding.ages.size()) : 1;

    struct SmoothView {
        const DesignTerm* term;
        std::unordered_map<std::string, int> level_code;
    };
    std::vector<SmoothView> smooths;
    for (const auto& t : recipe.terms) {
        if (!t.smooth) continue;
        SmoothView v{&t, {}};
        for (std::size_t l = 0; l < t.block.levels.size(); ++l) v.level_code[t.block.levels[l]] = static_cast<int>(l);
        smooths.push_back(std::move(v));
    }

    std::vector<Eigen::Triplet<double>> triplets;
    std::vector<SparseEntry> entries;
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto& row = frame.rows[i];
        const auto r = static_cast<Eigen::Index>(i);
        triplets.emplace_back(r, 0, 1.0);
        if (coding.age || coding.gender_age) {
            auto it = age_code.find(row.age);
            if (it == age_code.end()) throw Error(ErrorKind::Level, fmt::format("age {} was not seen in training", row.age));
            if (coding.age && it->second > 0) triplets.emplace_back(r, age_first + it->second - 1, 1.0);
            if (coding.gender_age && row.gender == Gender::Male) {
                triplets.emplace_back(r, gender_age_first + it->second, 1.0);
            }
        }
        for (const auto& v : smooths) {
            const auto& t = *v.term;
            int level = 0;
            if (!t.spec.factors.empty() && t.block.layout != BlockLayout::Plain) {
                const auto label = factor_label(row, t.spec.factors);
                auto it = v.level_code.find(label);
                if (it == v.level_code.end()) {
                    throw Error(ErrorKind::Level,
                                fmt::format("term '{}': level '{}' was not seen in training", t.name, label));
                }
                level = it->second;
            }
            const double x = t.spec.kind == SmoothKind::RandomEffect ? 0.0 : covariate_value(row, t.spec.covariate);
            entries.clear();
            t.block.evaluate(x, level, entries);
            for (const auto& e : entries) triplets.emplace_back(r, t.first + e.col, e.value);
        }
    }
    Eigen::SparseMatrix<double, Eigen::RowMajor> out(static_cast<Eigen::Index>(frame.size()), recipe.cols);
    out.setFromTriplets(triplets.begin(), triplets.end());
    return out;
}

} // namespace mortgam
