// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Error hierarchy. Every error carries a stable machine-readable code that the
// CLI prints on failure.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cevo {

class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}

    [[nodiscard]] const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define CEVO_DEFINE_ERROR(Name)                                              \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& what) : Error(#Name, what) {}       \
    }

CEVO_DEFINE_ERROR(ServiceError);
CEVO_DEFINE_ERROR(ParseError);
CEVO_DEFINE_ERROR(EmptyClass);
CEVO_DEFINE_ERROR(CacheCorrupt);
CEVO_DEFINE_ERROR(ShapeError);
CEVO_DEFINE_ERROR(IncompatibleVersions);
CEVO_DEFINE_ERROR(NoLabels);
CEVO_DEFINE_ERROR(DivergedLoss);
CEVO_DEFINE_ERROR(NoEligiblePairs);
CEVO_DEFINE_ERROR(UnknownRound);
CEVO_DEFINE_ERROR(InfeasibleWorld);
CEVO_DEFINE_ERROR(LabelAccessViolation);
CEVO_DEFINE_ERROR(ConfigError);
CEVO_DEFINE_ERROR(InvalidConcept);

#undef CEVO_DEFINE_ERROR

/// Zero-variance logit column; `column()` is the offending class index.
class DegenerateColumn : public Error {
public:
    DegenerateColumn(std::size_t column, const std::string& what)
        : Error("DegenerateColumn", what), column_(column) {}

    [[nodiscard]] std::size_t column() const noexcept { return column_; }

private:
    std::size_t column_;
};

}  // namespace cevo
