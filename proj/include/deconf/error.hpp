#pragma once

#include <stdexcept>
#include <string>

namespace deconf {

// Every library failure derives from Error. The `kind()` string is stable and
// is what the CLI reports; the message carries the details.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define DECONF_DEFINE_ERROR(Name)                                        \
    class Name : public Error {                                          \
    public:                                                              \
        explicit Name(const std::string& what) : Error(#Name, what) {}   \
    }

// Configuration / usage errors.
DECONF_DEFINE_ERROR(InvalidInput);
DECONF_DEFINE_ERROR(InvalidLink);
DECONF_DEFINE_ERROR(ConfigError);

// Data-dependent degeneracies.
DECONF_DEFINE_ERROR(DegenerateResponse);
DECONF_DEFINE_ERROR(DegenerateTreatmentArm);
DECONF_DEFINE_ERROR(DegenerateWeights);
DECONF_DEFINE_ERROR(DegenerateFamily);
DECONF_DEFINE_ERROR(DegenerateDesign);
DECONF_DEFINE_ERROR(NullSpaceEmpty);

// I/O.
DECONF_DEFINE_ERROR(SchemaError);
DECONF_DEFINE_ERROR(ParseError);
DECONF_DEFINE_ERROR(IoError);

#undef DECONF_DEFINE_ERROR

}  // namespace deconf
