#include "edm/manifest_io.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include "edm/binary_io.hpp"

namespace edm {

namespace {

using Kind = ManifestError::Kind;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::map<std::string, std::string, std::less<>>& kv,
               std::string_view key) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw ManifestError(Kind::kMalformedHeader,
                        "manifest header lacks '" + std::string(key) + "'");
  const std::string& s = it->second;
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ManifestError(Kind::kMalformedHeader, "manifest header field '" +
                                                    std::string(key) +
                                                    "' is not a number");
  return v;
}

std::string header_line(const DatasetManifest& m) {
  if (m.noise_spec.open_source.empty() ||
      m.noise_spec.open_source.find_first_of(" \t\r\n=") != std::string::npos)
    throw ManifestError(Kind::kInvalidContent,
                        "open_source must be a non-empty token without "
                        "whitespace or '='");
  std::ostringstream h;
  h << kManifestMagic << " N=" << m.samples.size() << " d=" << m.feature_dim
    << " classes=" << m.num_classes << " rho=" << format_double(m.noise_spec.rho)
    << " omega=" << format_double(m.noise_spec.omega)
    << " open_source=" << m.noise_spec.open_source
    << " flip=uniform_excluding_true seed=" << m.noise_spec.seed << '\n';
  return h.str();
}

}  // namespace

std::string encode_manifest(const DatasetManifest& m) {
  const std::string header = header_line(m);
  bin::Writer rec;
  for (const auto& s : m.samples) {
    if (s.features.size() != static_cast<std::size_t>(m.feature_dim))
      throw ManifestError(Kind::kDimensionMismatch,
                          "sample " + std::to_string(s.id) +
                              " has feature width " +
                              std::to_string(s.features.size()));
    rec.put<std::int64_t>(s.id);
    rec.put<std::uint8_t>(static_cast<std::uint8_t>(s.provenance));
    rec.put<std::int32_t>(s.true_class);
    rec.put<std::int32_t>(s.observed_class);
    for (float f : s.features) rec.put_f32(f);
  }
  bin::Writer tail;
  tail.put<std::uint64_t>(rec.size());
  tail.put<std::uint64_t>(bin::fnv1a64(rec.data(), bin::fnv1a64(header)));
  return header + rec.data() + tail.data();
}

DatasetManifest decode_manifest(std::string_view bytes,
                                std::optional<int> expected_dim) {
  const auto eol = bytes.find('\n');
  if (eol == std::string_view::npos)
    throw ManifestError(Kind::kMalformedHeader, "manifest header not terminated");
  const std::string_view header = bytes.substr(0, eol + 1);

  std::istringstream hs{std::string(header)};
  std::string magic;
  hs >> magic;
  if (magic != kManifestMagic)
    throw ManifestError(Kind::kMalformedHeader, "bad manifest magic '" + magic +
                                                    "'");
  std::map<std::string, std::string, std::less<>> kv;
  for (std::string tok; hs >> tok;) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ManifestError(Kind::kMalformedHeader,
                          "malformed header token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }

  DatasetManifest m;
  const auto n = parse_number<std::uint64_t>(kv, "N");
  m.feature_dim = parse_number<int>(kv, "d");
  m.num_classes = parse_number<int>(kv, "classes");
  m.noise_spec.rho = parse_number<double>(kv, "rho");
  m.noise_spec.omega = parse_number<double>(kv, "omega");
  m.noise_spec.seed = parse_number<std::uint64_t>(kv, "seed");
  if (auto it = kv.find("open_source"); it != kv.end())
    m.noise_spec.open_source = it->second;
  else
    throw ManifestError(Kind::kMalformedHeader, "manifest header lacks 'open_source'");
  if (auto it = kv.find("flip"); it == kv.end() ||
                                 it->second != "uniform_excluding_true")
    throw ManifestError(Kind::kMalformedHeader, "unsupported flip distribution");
  if (m.feature_dim < 1 || m.num_classes < 1)
    throw ManifestError(Kind::kMalformedHeader,
                        "manifest header has non-positive d or classes");
  if (expected_dim && *expected_dim != m.feature_dim)
    throw ManifestError(Kind::kDimensionMismatch,
                        "manifest has d=" + std::to_string(m.feature_dim) +
                            ", expected " + std::to_string(*expected_dim));

  const std::size_t record_size =
      8 + 1 + 4 + 4 + 4 * static_cast<std::size_t>(m.feature_dim);
  const std::string_view body = bytes.substr(eol + 1);
  if (n > (body.size() / record_size) + 1)
    throw ManifestError(Kind::kTruncated, "manifest declares " +
                                              std::to_string(n) +
                                              " samples but file is too short");
  const std::size_t records_len = static_cast<std::size_t>(n) * record_size;
  if (body.size() < records_len + 16)
    throw ManifestError(Kind::kTruncated, "manifest truncated: expected " +
                                              std::to_string(records_len + 16) +
                                              " bytes after header, found " +
                                              std::to_string(body.size()));
  if (body.size() > records_len + 16)
    throw ManifestError(Kind::kDimensionMismatch,
                        "manifest body length inconsistent with N and d");

  bin::Reader tail(body.substr(records_len));
  std::uint64_t stored_len = 0;
  std::uint64_t stored_sum = 0;
  tail.get(stored_len);
  tail.get(stored_sum);
  const std::string_view records = body.substr(0, records_len);
  if (stored_len != records_len)
    throw ManifestError(Kind::kChecksum, "manifest length checksum mismatch");
  if (stored_sum != bin::fnv1a64(records, bin::fnv1a64(header)))
    throw ManifestError(Kind::kChecksum, "manifest content checksum mismatch");

  bin::Reader r(records);
  m.samples.resize(static_cast<std::size_t>(n));
  for (auto& s : m.samples) {
    std::uint8_t prov = 0;
    std::int32_t tc = 0;
    std::int32_t oc = 0;
    r.get(s.id);
    r.get(prov);
    r.get(tc);
    r.get(oc);
    if (prov > 2)
      throw ManifestError(Kind::kInvalidContent, "bad provenance tag");
    s.provenance = static_cast<Provenance>(prov);
    s.true_class = tc;
    s.observed_class = oc;
    s.features.resize(static_cast<std::size_t>(m.feature_dim));
    for (float& f : s.features) r.get_f32(f);
  }
  m.counts = count_provenance(m.samples);
  try {
    validate_manifest(m);
  } catch (const BenchgenError& e) {
    throw ManifestError(Kind::kInvalidContent, e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  const std::string bytes = encode_manifest(m);
  try {
    bin::write_file(path, bytes);
  } catch (const bin::IoError& e) {
    throw ManifestError(Kind::kIo, e.what());
  }
}

DatasetManifest load_manifest(const std::string& path,
                              std::optional<int> expected_dim) {
  std::string bytes;
  try {
    bytes = bin::read_file(path);
  } catch (const bin::IoError& e) {
    throw ManifestError(Kind::kIo, e.what());
  }
  return decode_manifest(bytes, expected_dim);
}

}  // namespace edm
