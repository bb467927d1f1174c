#include "ggnet/ingestion.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace ggnet {

// -------------------------------------------------------------- date helpers

std::int64_t days_from_ymd(int year, unsigned month, unsigned day) {
  // Howard Hinnant's civil-days algorithm
  year -= month <= 2;
  const std::int64_t era = (year >= 0 ? year : year - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(year - era * 400);
  const unsigned doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void ymd_from_days(std::int64_t days, int& year, unsigned& month, unsigned& day) {
  days += 719468;
  const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(days - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  day = doy - (153 * mp + 2) / 5 + 1;
  month = mp + (mp < 10 ? 3 : -9);
  year = static_cast<int>(y + (month <= 2));
}

namespace {

void parse_yyyymmdd(const std::string& s, int& y, unsigned& m, unsigned& d) {
  if (s.size() != 8 || !std::all_of(s.begin(), s.end(), ::isdigit)) {
    throw DataError("expected YYYYMMDD date, got '" + s + "'");
  }
  y = std::stoi(s.substr(0, 4));
  m = static_cast<unsigned>(std::stoi(s.substr(4, 2)));
  d = static_cast<unsigned>(std::stoi(s.substr(6, 2)));
  if (m < 1 || m > 12 || d < 1 || d > 31) throw DataError("invalid date '" + s + "'");
}

std::string iso_from_days(std::int64_t days) {
  int y;
  unsigned m, d;
  ymd_from_days(days, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", y, m, d);
  return buf;
}

}  // namespace

std::string yyyymmdd_to_iso(const std::string& compact) {
  int y;
  unsigned m, d;
  parse_yyyymmdd(compact, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", y, m, d);
  return buf;
}

std::vector<std::string> make_daily_timestamps(const std::string& start_yyyymmdd,
                                               std::size_t count) {
  int y;
  unsigned m, d;
  parse_yyyymmdd(start_yyyymmdd, y, m, d);
  const std::int64_t start = days_from_ymd(y, m, d);
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(iso_from_days(start + static_cast<std::int64_t>(i)));
  return out;
}

std::vector<std::string> daily_range(const std::string& start_yyyymmdd,
                                     const std::string& end_yyyymmdd) {
  int y;
  unsigned m, d;
  parse_yyyymmdd(start_yyyymmdd, y, m, d);
  const std::int64_t start = days_from_ymd(y, m, d);
  parse_yyyymmdd(end_yyyymmdd, y, m, d);
  const std::int64_t end = days_from_ymd(y, m, d);
  if (end < start) throw DataError("date range is empty");
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(end - start + 1));
  for (std::int64_t day = start; day <= end; ++day) out.push_back(iso_from_days(day));
  return out;
}

std::vector<std::string> hourly_range(const std::string& start_yyyymmdd,
                                      const std::string& end_yyyymmdd) {
  std::vector<std::string> out;
  for (const std::string& day : daily_range(start_yyyymmdd, end_yyyymmdd)) {
    for (unsigned h = 0; h < 24; ++h) {
      char buf[24];
      std::snprintf(buf, sizeof(buf), "%sT%02u:00", day.c_str(), h);
      out.push_back(buf);
    }
  }
  return out;
}

// ------------------------------------------------------------ dataset on disk

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += "\"";
  return out;
}

void check_resolution(const std::string& resolution,
                      const std::vector<std::string>& timestamps) {
  if (resolution != "daily" && resolution != "hourly") {
    throw DataError("resolution must be 'daily' or 'hourly', got '" + resolution + "'");
  }
  const std::size_t want = resolution == "daily" ? 10 : 16;
  for (const std::string& t : timestamps) {
    if (t.size() != want) {
      throw DataError("timestamp '" + t + "' does not match " + resolution +
                      " resolution");
    }
  }
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (!(timestamps[i - 1] < timestamps[i])) {
      throw DataError("timestamps must be strictly increasing (" + timestamps[i - 1] +
                      " then " + timestamps[i] + ")");
    }
  }
}

}  // namespace

void save_dataset(const SpatioTemporalDataset& ds, const std::string& dir,
                  const std::string& resolution) {
  ds.validate();
  check_resolution(resolution, ds.timestamps);
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);

  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["resolution"] = resolution;
  meta["fill_value"] = -999.0;
  meta["channels"] = nlohmann::json::array();
  for (const std::string& name : ds.channel_names) {
    meta["channels"].push_back({{"name", name}, {"unit", ""}});
  }
  meta["locations"] = nlohmann::json::array();
  for (std::size_t n = 0; n < ds.N; ++n) {
    nlohmann::json loc{{"id", ds.location_ids[n]}};
    if (ds.has_coords()) {
      loc["lat"] = ds.coords[n][0];
      loc["lon"] = ds.coords[n][1];
    }
    meta["locations"].push_back(loc);
  }
  meta["timestamps"] = ds.timestamps;
  {
    std::ofstream out(base / "meta.json");
    if (!out) throw DataError("cannot write " + (base / "meta.json").string());
    out << meta.dump(2) << '\n';
  }

  std::ofstream out(base / "data.csv");
  if (!out) throw DataError("cannot write " + (base / "data.csv").string());
  out.precision(17);
  out << "location_id,timestamp,channel,value,observed\n";
  for (std::size_t n = 0; n < ds.N; ++n)
    for (std::size_t t = 0; t < ds.T; ++t)
      for (std::size_t d = 0; d < ds.D; ++d) {
        if (!ds.observed(n, t, d)) continue;
        out << csv_escape(ds.location_ids[n]) << ',' << ds.timestamps[t] << ','
            << csv_escape(ds.channel_names[d]) << ',' << ds.value_at(n, t, d)
            << ",1\n";
      }
}

SpatioTemporalDataset load_dataset(const std::string& dir) {
  const std::filesystem::path base(dir);
  std::ifstream meta_in(base / "meta.json");
  if (!meta_in) throw DataError("cannot read " + (base / "meta.json").string());
  nlohmann::json meta;
  try {
    meta_in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed meta.json: " + std::string(e.what()));
  }
  if (!meta.contains("format_version") || meta["format_version"].get<int>() != 1) {
    throw DataError("unsupported dataset format version");
  }

  SpatioTemporalDataset ds;
  for (const auto& c : meta.at("channels")) {
    ds.channel_names.push_back(c.at("name").get<std::string>());
  }
  bool any_coords = false;
  for (const auto& l : meta.at("locations")) {
    ds.location_ids.push_back(l.at("id").get<std::string>());
    if (l.contains("lat")) any_coords = true;
  }
  if (any_coords) {
    for (const auto& l : meta.at("locations")) {
      ds.coords.push_back({l.at("lat").get<double>(), l.at("lon").get<double>()});
    }
  }
  ds.timestamps = meta.at("timestamps").get<std::vector<std::string>>();
  check_resolution(meta.at("resolution").get<std::string>(), ds.timestamps);

  ds.N = ds.location_ids.size();
  ds.T = ds.timestamps.size();
  ds.D = ds.channel_names.size();
  ds.values.assign(ds.N * ds.T * ds.D, 0.0);
  ds.mask.assign(ds.N * ds.T * ds.D, 0);

  std::map<std::string, std::size_t> loc_index, time_index, chan_index;
  for (std::size_t i = 0; i < ds.N; ++i) loc_index[ds.location_ids[i]] = i;
  for (std::size_t i = 0; i < ds.T; ++i) time_index[ds.timestamps[i]] = i;
  for (std::size_t i = 0; i < ds.D; ++i) chan_index[ds.channel_names[i]] = i;

  std::ifstream in(base / "data.csv");
  if (!in) throw DataError("cannot read " + (base / "data.csv").string());
  std::string line;
  std::getline(in, line);  // header
  std::size_t line_no = 1;
  std::vector<std::uint8_t> seen(ds.values.size(), 0);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string loc, ts, chan, value, observed;
    if (!std::getline(ss, loc, ',') || !std::getline(ss, ts, ',') ||
        !std::getline(ss, chan, ',') || !std::getline(ss, value, ',') ||
        !std::getline(ss, observed)) {
      throw DataError("malformed data row at line " + std::to_string(line_no));
    }
    const auto li = loc_index.find(loc);
    if (li == loc_index.end()) {
      throw DataError("row " + std::to_string(line_no) + ": unknown location '" +
                      loc + "'");
    }
    const auto ti = time_index.find(ts);
    if (ti == time_index.end()) {
      throw DataError("row " + std::to_string(line_no) + ": unknown timestamp '" +
                      ts + "'");
    }
    const auto ci = chan_index.find(chan);
    if (ci == chan_index.end()) {
      throw DataError("row " + std::to_string(line_no) + ": unknown channel '" +
                      chan + "'");
    }
    const std::size_t i = ds.offset(li->second, ti->second, ci->second);
    if (seen[i]) {
      throw DataError("row " + std::to_string(line_no) + ": duplicate triple (" +
                      loc + ", " + ts + ", " + chan + ")");
    }
    seen[i] = 1;
    if (observed == "1") {
      ds.values[i] = std::stod(value);
      ds.mask[i] = 1;
    }
  }
  ds.validate();
  return ds;
}

// ------------------------------------------------------------------ POWER API

void PowerRequest::validate() const {
  if (resolution != "daily" && resolution != "hourly") {
    throw ConfigError("PowerRequest resolution must be daily or hourly");
  }
  if (parameters.empty()) throw ConfigError("PowerRequest needs parameters");
  if (start.empty() || end.empty()) throw ConfigError("PowerRequest needs a date range");
  daily_range(start, end);  // validates order and format
  if (latitude < -90 || latitude > 90 || longitude < -180 || longitude > 180) {
    throw ConfigError("PowerRequest coordinates out of range");
  }
}

namespace {

std::string power_key_to_iso(const std::string& key, const std::string& resolution) {
  if (resolution == "daily") {
    return yyyymmdd_to_iso(key);
  }
  if (key.size() != 10) throw DataError("unexpected hourly key '" + key + "'");
  return yyyymmdd_to_iso(key.substr(0, 8)) + "T" + key.substr(8, 2) + ":00";
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

// parameter -> timestamp -> value
using PayloadMap = std::map<std::string, std::map<std::string, double>>;

PayloadMap parse_power_payload(const std::string& body, const PowerRequest& req) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unparseable payload for " + req.location_id + ": " +
                    std::string(e.what()) + "; excerpt: " + body.substr(0, 120));
  }
  if (!j.contains("properties") || !j["properties"].contains("parameter")) {
    throw DataError("payload schema drift for " + req.location_id +
                    "; excerpt: " + body.substr(0, 120));
  }
  const std::vector<std::string> expected =
      req.resolution == "daily" ? daily_range(req.start, req.end)
                                : hourly_range(req.start, req.end);

  PayloadMap out;
  for (const std::string& param : req.parameters) {
    const auto& params = j["properties"]["parameter"];
    if (!params.contains(param)) {
      throw DataError("payload for " + req.location_id + " lacks parameter " + param);
    }
    std::map<std::string, double> series;
    for (const auto& [key, value] : params[param].items()) {
      series[power_key_to_iso(key, req.resolution)] = value.get<double>();
    }
    // the date axis must match the requested range exactly
    if (series.size() != expected.size()) {
      throw DataError("payload for " + req.location_id + "/" + param + " covers " +
                      std::to_string(series.size()) + " steps, expected " +
                      std::to_string(expected.size()));
    }
    for (const std::string& ts : expected) {
      if (!series.count(ts)) {
        throw DataError("payload for " + req.location_id + "/" + param +
                        " is missing " + ts);
      }
    }
    out[param] = std::move(series);
  }
  return out;
}

std::string http_get_with_retries(const std::string& base_url, const std::string& path,
                                  const FetchOptions& options) {
  std::string last_error;
  for (std::size_t attempt = 0; attempt <= options.retries; ++attempt) {
    if (attempt > 0) {
      const double sleep_s =
          options.backoff_base_seconds * std::pow(2.0, double(attempt - 1));
      std::this_thread::sleep_for(std::chrono::duration<double>(sleep_s));
    }
    httplib::Client client(base_url);
    client.set_connection_timeout(10);
    client.set_read_timeout(30);
    auto res = client.Get(path);
    if (res && res->status == 200) return res->body;
    if (res) {
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      last_error = "transport error " + httplib::to_string(res.error());
    }
  }
  throw DataError("fetch failed after " + std::to_string(options.retries + 1) +
                  " attempts: " + last_error);
}

}  // namespace

SpatioTemporalDataset fetch_power(const std::vector<PowerRequest>& requests,
                                  const FetchOptions& options, FetchReport* report) {
  for (const PowerRequest& r : requests) r.validate();

  if (requests.empty()) {
    SpatioTemporalDataset empty = SpatioTemporalDataset::empty(0, 0, 0);
    return empty;
  }

  // one shared axis: all requests must agree on range/resolution/parameters
  const PowerRequest& first = requests.front();
  for (const PowerRequest& r : requests) {
    if (r.resolution != first.resolution || r.start != first.start ||
        r.end != first.end || r.parameters != first.parameters) {
      throw ConfigError("all PowerRequests must share resolution, range, parameters");
    }
  }

  std::string base_url = options.base_url;
  if (const char* env = std::getenv("POWER_BASE_URL")) base_url = env;

  const std::vector<std::string> timestamps =
      first.resolution == "daily" ? daily_range(first.start, first.end)
                                  : hourly_range(first.start, first.end);

  SpatioTemporalDataset ds =
      SpatioTemporalDataset::empty(requests.size(), timestamps.size(),
                                   first.parameters.size());
  ds.timestamps = timestamps;
  ds.channel_names = first.parameters;
  ds.coords.resize(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    ds.location_ids[i] = requests[i].location_id.empty()
                             ? "loc" + std::to_string(i)
                             : requests[i].location_id;
    ds.coords[i] = {requests[i].latitude, requests[i].longitude};
  }
  std::map<std::string, std::size_t> time_index;
  for (std::size_t i = 0; i < ds.T; ++i) time_index[ds.timestamps[i]] = i;

  auto last_request = std::chrono::steady_clock::now() -
                      std::chrono::hours(1);
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const PowerRequest& req = requests[i];
    std::string body;
    try {
      if (!options.fixture_dir.empty()) {
        const std::filesystem::path p =
            std::filesystem::path(options.fixture_dir) / (ds.location_ids[i] + ".json");
        std::ifstream in(p);
        if (!in) throw DataError("fixture not found: " + p.string());
        std::stringstream ss;
        ss << in.rdbuf();
        body = ss.str();
      } else {
        if (options.requests_per_second > 0.0) {
          const auto min_gap = std::chrono::duration<double>(
              1.0 / options.requests_per_second);
          const auto now = std::chrono::steady_clock::now();
          if (now - last_request < min_gap) {
            std::this_thread::sleep_for(min_gap - (now - last_request));
          }
        }
        std::ostringstream path;
        path.setf(std::ios::fixed);
        path.precision(6);
        path << "/api/temporal/" << req.resolution << "/point?parameters="
             << join(req.parameters, ',') << "&community=RE"
             << "&longitude=" << req.longitude << "&latitude=" << req.latitude
             << "&start=" << req.start << "&end=" << req.end << "&format=JSON";
        last_request = std::chrono::steady_clock::now();
        body = http_get_with_retries(base_url, path.str(), options);
      }

      const PayloadMap payload = parse_power_payload(body, req);
      for (std::size_t d = 0; d < ds.D; ++d) {
        const auto& series = payload.at(ds.channel_names[d]);
        for (const auto& [ts, value] : series) {
          const std::size_t t = time_index.at(ts);
          if (value == options.fill_value) continue;  // provider fill -> missing
          const std::size_t off = ds.offset(i, t, d);
          ds.values[off] = value;
          ds.mask[off] = 1;
        }
      }
      if (report) report->fetched += 1;
    } catch (const DataError& e) {
      if (!report) throw;
      report->errors.push_back(ds.location_ids[i] + ": " + e.what());
    }
  }
  return ds;
}

std::vector<NamedLocation> load_locations_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read locations file " + path);
  std::vector<NamedLocation> out;
  std::string line;
  std::getline(in, line);  // header
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string id, country, lat, lon;
    if (!std::getline(ss, id, ',') || !std::getline(ss, country, ',') ||
        !std::getline(ss, lat, ',') || !std::getline(ss, lon)) {
      throw DataError("malformed locations row at line " + std::to_string(line_no));
    }
    out.push_back({id, std::stod(lat), std::stod(lon)});
  }
  return out;
}

}  // namespace ggnet
