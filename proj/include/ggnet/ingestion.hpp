#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ggnet/dataset.hpp"

namespace ggnet {

/// On-disk dataset layout: <dir>/data.csv holds the observed values in long
/// form (location_id, timestamp, channel, value, observed), <dir>/meta.json
/// the channel catalogue, location table, time axis and format version.
/// Files written by save_dataset are canonical: rows ordered by location,
/// then time, then channel, only observed entries written.
void save_dataset(const SpatioTemporalDataset& ds, const std::string& dir,
                  const std::string& resolution = "daily");

SpatioTemporalDataset load_dataset(const std::string& dir);

// ------------------------------------------------------------- date helpers

/// Days since 1970-01-01 for a calendar date.
std::int64_t days_from_ymd(int year, unsigned month, unsigned day);
void ymd_from_days(std::int64_t days, int& year, unsigned& month, unsigned& day);

/// "YYYYMMDD" -> ISO "YYYY-MM-DD".
std::string yyyymmdd_to_iso(const std::string& compact);

/// Consecutive ISO dates starting at a "YYYYMMDD" day.
std::vector<std::string> make_daily_timestamps(const std::string& start_yyyymmdd,
                                               std::size_t count);
/// ISO date list for an inclusive range.
std::vector<std::string> daily_range(const std::string& start_yyyymmdd,
                                     const std::string& end_yyyymmdd);
/// "YYYY-MM-DDTHH:00" steps for an inclusive day range.
std::vector<std::string> hourly_range(const std::string& start_yyyymmdd,
                                      const std::string& end_yyyymmdd);

// ---------------------------------------------------------------- POWER API

/// One point request against the POWER-style temporal API.
struct PowerRequest {
  std::string location_id;
  std::string resolution = "daily";   // daily | hourly
  std::vector<std::string> parameters;  // e.g. T2M, WS2M, RH2M
  double latitude = 0.0;
  double longitude = 0.0;
  std::string start;  // YYYYMMDD
  std::string end;    // YYYYMMDD

  void validate() const;
};

struct FetchOptions {
  /// Endpoint base; the POWER_BASE_URL environment variable overrides it.
  std::string base_url = "https://power.larc.nasa.gov";
  /// When set, responses are replayed from <fixture_dir>/<location_id>.json
  /// and no network traffic happens.
  std::string fixture_dir;
  double requests_per_second = 0.5;
  std::size_t retries = 3;
  double backoff_base_seconds = 0.5;
  double fill_value = -999.0;
};

struct FetchReport {
  std::vector<std::string> errors;  // one line per failed location
  std::size_t fetched = 0;
};

/// Assemble a dataset from one request per location. Provider fill values map
/// to mask 0. Failed locations stay fully masked and are listed in the
/// report. Payloads whose date axis disagrees with the requested range are
/// rejected.
SpatioTemporalDataset fetch_power(const std::vector<PowerRequest>& requests,
                                  const FetchOptions& options, FetchReport* report);

/// Locations from a CSV asset with columns id,country,latitude,longitude.
struct NamedLocation {
  std::string id;
  double latitude = 0.0;
  double longitude = 0.0;
};
std::vector<NamedLocation> load_locations_csv(const std::string& path);

}  // namespace ggnet
