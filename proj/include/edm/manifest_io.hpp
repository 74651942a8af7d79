#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "edm/benchgen.hpp"

namespace edm {

// Manifest file layout:
//
//   EDMv1 N=<n> d=<d> classes=<k> rho=<r> omega=<w> open_source=<id>
//         flip=uniform_excluding_true seed=<s>\n          (one text line)
//   N records: i64 id, u8 provenance, i32 true_class (-1 = none),
//              i32 observed_class, d x f32 features
//   u64 byte length of the record section
//   u64 FNV-1a of header line + record section
//
// All integers and floats little-endian.

class ManifestError : public std::runtime_error {
 public:
  enum class Kind {
    kIo,
    kMalformedHeader,
    kDimensionMismatch,
    kTruncated,
    kChecksum,
    kInvalidContent,
  };

  ManifestError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::string_view kManifestMagic = "EDMv1";

std::string encode_manifest(const DatasetManifest& m);
DatasetManifest decode_manifest(std::string_view bytes,
                                std::optional<int> expected_dim = {});

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path,
                              std::optional<int> expected_dim = {});

}  // namespace edm
