#pragma once

#include "mortgam/covariates.hpp"
#include "mortgam/model_spec.hpp"
#include "mortgam/spline_basis.hpp"

#include <Eigen/Sparse>

#include <string>
#include <vector>

namespace mortgam {

/// Column range of one model term plus what is needed to rebuild its rows
/// for new data.
struct DesignTerm {
    std::string name;
    Eigen::Index first = 0;
    Eigen::Index width = 0;
    bool smooth = false;
    SmoothTermSpec spec;   ///< meaningful for smooth terms only
    SmoothBlock block;     ///< basis recipe; `columns` holds no rows
};

struct DesignPenalty {
    int term = 0;                 ///< index into Design::terms
    Eigen::Index first_column = 0; ///< absolute column of the penalty's first entry
    Penalty penalty;              ///< offset is relative to first_column (always 0)
    int lambda_index = 0;
};

/// Treatment coding of the parametric part: age levels in ascending order,
/// the first one is the reference absorbed by the intercept.
struct ParametricCoding {
    std::vector<int> ages;
    bool age = false;
    bool gender_age = false;

    Eigen::Index width() const;
};

/// Everything needed to build model-matrix rows for any frame: the spec,
/// the parametric coding and the smooth bases fixed at training time.
struct DesignRecipe {
    ModelSpec spec;
    ParametricCoding coding;
    std::vector<DesignTerm> terms;
    Eigen::Index cols = 0;

    const DesignTerm& term(const std::string& name) const;
};

struct Design {
    Eigen::SparseMatrix<double> X;
    Eigen::VectorXd y;
    DesignRecipe recipe;
    std::vector<DesignPenalty> penalties;

    Eigen::Index rows() const { return X.rows(); }
    Eigen::Index cols() const { return X.cols(); }
    int lambda_count() const { return static_cast<int>(penalties.size()); }
    const std::vector<DesignTerm>& terms() const { return recipe.terms; }
};

Design assemble_design(const ModelFrame& frame, const ModelSpec& spec);

/// Penalty list implied by a recipe: one smoothing parameter per penalty matrix.
std::vector<DesignPenalty> penalties_of(const DesignRecipe& recipe);

/// Model-matrix rows for new data using the training knots, constraints and
/// factor levels. An unseen factor level raises a level error.
Eigen::SparseMatrix<double, Eigen::RowMajor> rows_for(const DesignRecipe& recipe, const ModelFrame& frame);

/// Grouping-factor label of a row, e.g. "AUT:female:30".
std::string factor_label(const FrameRow& row, const std::vector<std::string>& factors);
double covariate_value(const FrameRow& row, const std::string& name);

} // namespace mortgam
