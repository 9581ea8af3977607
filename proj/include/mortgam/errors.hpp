#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mortgam {

enum class ErrorKind {
    Parse,
    DuplicateKey,
    Coverage,
    EmptyPanel,
    MissingYear,
    MissingSegment,
    Join,
    Rank,
    DegenerateFactor,
    DegenerateLevel,
    Spec,
    Coding,
    SingularFit,
    Conditioning,
    Convergence,
    ExcessiveTrim,
    UndefinedAcf,
    Gap,
    Level,
    Degenerate,
    Split,
    Alignment,
    Version,
    Config,
    Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library. The kind lets callers (and tests)
/// tell error classes apart without parsing the message.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace mortgam
