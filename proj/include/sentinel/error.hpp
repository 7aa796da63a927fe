#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sentinel {

enum class ErrorCode {
  // packet-core
  FrameTooShort,
  FieldOutOfRange,
  InconsistentLengths,
  // pcap-io
  BadMagic,
  TruncatedRecord,
  RecordTooLong,
  // packet-lang
  MalformedSequence,
  // traffic-forge
  InvalidConfig,
  // neural-core
  IdOutOfRange,
  ShapeMismatch,
  EmptyCorpus,
  UnknownFreezeTarget,
  BadCheckpoint,
  CompatibilityError,
  // threat-eval
  EmptySet,
  // shared
  Io,
  BadDataset,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this exception; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// pcap reader failure that still knows how many records were intact.
class TruncatedRecordError : public Error {
 public:
  TruncatedRecordError(std::size_t complete_records, const std::string& what)
      : Error(ErrorCode::TruncatedRecord, what), complete_records_(complete_records) {}

  std::size_t complete_records() const noexcept { return complete_records_; }

 private:
  std::size_t complete_records_;
};

}  // namespace sentinel
