#pragma once

#include <stdexcept>
#include <string>

namespace dfrf::dataio {

enum class ErrorCode {
  MissingFile,
  BadMagic,
  VersionMismatch,
  ProfileMismatch,
  CorruptTable,
  MalformedManifest,
  MalformedPose,
  BadImage,
  WriteFailed,
};

const char* error_code_name(ErrorCode code);

class DataError : public std::runtime_error {
 public:
  DataError(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dfrf::dataio
