#include "mortgam/errors.hpp"

namespace mortgam {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::DuplicateKey: return "duplicate-key";
    case ErrorKind::Coverage: return "coverage";
    case ErrorKind::EmptyPanel: return "empty-panel";
    case ErrorKind::MissingYear: return "missing-year";
    case ErrorKind::MissingSegment: return "missing-segment";
    case ErrorKind::Join: return "join";
    case ErrorKind::Rank: return "rank";
    case ErrorKind::DegenerateFactor: return "degenerate-factor";
    case ErrorKind::DegenerateLevel: return "degenerate-level";
    case ErrorKind::Spec: return "spec";
    case ErrorKind::Coding: return "coding";
    case ErrorKind::SingularFit: return "singular-fit";
    case ErrorKind::Conditioning: return "conditioning";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::ExcessiveTrim: return "excessive-trim";
    case ErrorKind::UndefinedAcf: return "undefined-acf";
    case ErrorKind::Gap: return "gap";
    case ErrorKind::Level: return "level";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Split: return "split";
    case ErrorKind::Alignment: return "alignment";
    case ErrorKind::Version: return "version";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

} // namespace mortgam
