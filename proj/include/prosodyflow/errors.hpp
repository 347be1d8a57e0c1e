#pragma once

#include <stdexcept>
#include <string>

namespace pflow {

// Every failure raised by the library derives from Error so callers can
// catch the whole family at a subcommand boundary.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define PFLOW_DEFINE_ERROR(Name)                      \
    class Name : public Error {                       \
    public:                                           \
        explicit Name(const std::string& what)        \
            : Error(std::string(#Name ": ") + what) {} \
    }

PFLOW_DEFINE_ERROR(DimensionError);
PFLOW_DEFINE_ERROR(NumericError);
PFLOW_DEFINE_ERROR(ContractError);
PFLOW_DEFINE_ERROR(EmptySequenceError);
PFLOW_DEFINE_ERROR(ParameterizationError);
PFLOW_DEFINE_ERROR(SingularityError);
PFLOW_DEFINE_ERROR(DataError);
PFLOW_DEFINE_ERROR(FormatError);
PFLOW_DEFINE_ERROR(DegenerateInputError);
PFLOW_DEFINE_ERROR(VocabularyError);
PFLOW_DEFINE_ERROR(ConfigError);
PFLOW_DEFINE_ERROR(DomainError);

#undef PFLOW_DEFINE_ERROR

}  // namespace pflow
