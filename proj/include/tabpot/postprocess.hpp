#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tabpot/prompts_db.hpp"

namespace tabpot {

struct Plan {
    std::vector<std::string> relevant_columns;
    std::vector<AtomicOperation> operations;
    std::vector<std::string> programming_steps;
    // Text outside the labeled sections plus operation tokens that did not parse.
    std::string raw_remainder;

    friend bool operator==(const Plan& a, const Plan& b) {
        return a.relevant_columns == b.relevant_columns && a.operations == b.operations &&
               a.programming_steps == b.programming_steps;
    }
};

enum class CodeRole { reasoning, normalization };

struct CodeArtifact {
    std::string source;
    std::string entry_name;
    CodeRole role = CodeRole::reasoning;

    friend bool operator==(const CodeArtifact&, const CodeArtifact&) = default;
};

enum class Provenance {
    code_execution,
    code_execution_after_correction,
    default_answer,
    direct_completion,
    aligned,
    error,
};

std::string_view to_string(Provenance p);

struct Answer {
    std::string value;
    Provenance provenance = Provenance::error;

    friend bool operator==(const Answer&, const Answer&) = default;
};

inline constexpr std::string_view kDefaultAnswerMarker = "DEFAULT_ANSWER:";
inline constexpr std::string_view kErrorAnswer = "error";

Plan parse_plan(std::string_view completion);

// Canonical text form; parse_plan(render_plan(p)) == p.
std::string render_plan(const Plan& plan);

// First fenced block, else everything from the first "def " line. The entry
// is the conventional name for the role ("solution" / "normalize") when the
// source defines it, otherwise the first defined function. Throws NoCodeFound.
CodeArtifact extract_code(std::string_view completion, CodeRole role = CodeRole::reasoning,
                          std::vector<std::string>* warnings = nullptr);

// Text after the last DEFAULT_ANSWER: marker, on the same line. Braced values
// are unwrapped; unbraced values are taken as is.
std::optional<Answer> extract_default_answer(std::string_view completion);

// True when the default answer was given inside braces.
bool default_answer_is_braced(std::string_view completion);

// Content of the last balanced top-level {...}, trimmed.
std::optional<Answer> try_parse_braced_answer(std::string_view completion,
                                              Provenance provenance = Provenance::direct_completion);
// Throws FormatError when no balanced braces exist.
Answer parse_braced_answer(std::string_view completion, Provenance provenance = Provenance::direct_completion);

// Normalized exact match: trim, case-fold, strip surrounding quotes and
// braces, numeric comparison within 1e-6, "|" separated multi-answers as sets.
bool em_match(const Answer& prediction, std::string_view gold);
bool em_match(std::string_view prediction, std::string_view gold);

// The normalized form used by em_match for a single item.
std::string normalize_answer_text(std::string_view text);

}  // namespace tabpot
