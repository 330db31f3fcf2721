#pragma once

#include <stdexcept>
#include <string>

namespace tabpot {

// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define TABPOT_DEFINE_ERROR(Name, Base)        \
    class Name : public Base {                 \
    public:                                    \
        using Base::Base;                      \
    }

// table-model
TABPOT_DEFINE_ERROR(UnsupportedFormat, Error);
TABPOT_DEFINE_ERROR(EmptyTable, Error);

// prompts-db
TABPOT_DEFINE_ERROR(MissingStage, Error);
TABPOT_DEFINE_ERROR(MalformedRecord, Error);
TABPOT_DEFINE_ERROR(UnknownTaskStage, Error);

// prompt-management
TABPOT_DEFINE_ERROR(UnknownTask, Error);
TABPOT_DEFINE_ERROR(MalformedPayload, Error);
TABPOT_DEFINE_ERROR(PreconditionError, Error);

// postprocess
TABPOT_DEFINE_ERROR(NoCodeFound, Error);
TABPOT_DEFINE_ERROR(FormatError, Error);

// llm-client
TABPOT_DEFINE_ERROR(LlmError, Error);
TABPOT_DEFINE_ERROR(LlmTimeout, LlmError);
TABPOT_DEFINE_ERROR(TransportError, LlmError);
TABPOT_DEFINE_ERROR(ScriptMiss, LlmError);

class EndpointError : public LlmError {
public:
    EndpointError(int status, std::string body)
        : LlmError("endpoint returned HTTP " + std::to_string(status) + ": " + body),
          status_(status),
          body_(std::move(body)) {}

    int status() const noexcept { return status_; }
    const std::string& body() const noexcept { return body_; }

private:
    int status_;
    std::string body_;
};

// execution
TABPOT_DEFINE_ERROR(WorkerSpawnFailure, Error);
TABPOT_DEFINE_ERROR(ProtocolError, Error);

// eval-harness
TABPOT_DEFINE_ERROR(MissingFiles, Error);
TABPOT_DEFINE_ERROR(CountMismatch, Error);
TABPOT_DEFINE_ERROR(InsufficientData, Error);

#undef TABPOT_DEFINE_ERROR

}  // namespace tabpot
