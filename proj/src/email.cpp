#include "evomail/email.hpp"

#include <unicode/ucnv.h>
#include <unicode/ustring.h>

#include <algorithm>
#include <array>
#include <map>
#include <unordered_map>

#include "evomail/error.hpp"
#include "evomail/util.hpp"

namespace evomail {

namespace {

constexpr int kMaxMimeDepth = 16;

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        char x = a[i], y = b[i];
        if (x >= 'A' && x <= 'Z') x = static_cast<char>(x - 'A' + 'a');
        if (y >= 'A' && y <= 'Z') y = static_cast<char>(y - 'A' + 'a');
        if (x != y) return false;
    }
    return true;
}

bool istarts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

struct Header {
    std::string name;  // lowercase
    std::string value;
};

struct HeaderBlock {
    std::vector<Header> headers;

    const std::string* first(std::string_view name) const {
        for (const auto& h : headers) {
            if (h.name == name) return &h.value;
        }
        return nullptr;
    }
};

/// Locates the blank line separating headers from body. Returns the header
/// length and the body start offset.
std::optional<std::pair<std::size_t, std::size_t>> find_separator(std::string_view raw) {
    std::size_t line_start = 0;
    while (line_start < raw.size()) {
        std::size_t eol = raw.find('\n', line_start);
        if (eol == std::string_view::npos) return std::nullopt;
        std::string_view line = raw.substr(line_start, eol - line_start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) return std::make_pair(line_start, eol + 1);
        line_start = eol + 1;
    }
    return std::nullopt;
}

HeaderBlock parse_headers(std::string_view text) {
    HeaderBlock block;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if ((line.front() == ' ' || line.front() == '\t')) {
            if (!block.headers.empty()) {
                block.headers.back().value.push_back(' ');
                block.headers.back().value.append(trim(line));
            }
            continue;
        }
        const std::size_t colon = line.find(':');
        if (colon == std::string_view::npos || colon == 0) continue;
        std::string_view name = trim(line.substr(0, colon));
        if (name.find(' ') != std::string_view::npos) continue;
        block.headers.push_back({to_lower_ascii(name), std::string(trim(line.substr(colon + 1)))});
    }
    return block;
}

/// Content-Type style value: "type/sub; key=value; key2="value"".
struct ParamValue {
    std::string value;  // lowercase main token
    std::map<std::string, std::string> params;
};

ParamValue parse_param_value(std::string_view text) {
    ParamValue out;
    std::size_t pos = 0;
    const auto read_until_semicolon = [&]() {
        std::string token;
        bool quoted = false;
        while (pos < text.size()) {
            const char c = text[pos];
            if (c == '"') {
                quoted = !quoted;
                ++pos;
                continue;
            }
            if (c == '\\' && quoted && pos + 1 < text.size()) {
                token.push_back(text[pos + 1]);
                pos += 2;
                continue;
            }
            if (c == ';' && !quoted) break;
            token.push_back(c);
            ++pos;
        }
        if (pos < text.size()) ++pos;
        return token;
    };
    out.value = to_lower_ascii(trim(read_until_semicolon()));
    while (pos < text.size()) {
        std::string item = read_until_semicolon();
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos) continue;
        std::string key = to_lower_ascii(trim(std::string_view(item).substr(0, eq)));
        std::string value(trim(std::string_view(item).substr(eq + 1)));
        // RFC 2231 continuation/charset forms are reduced to their plain value.
        if (!key.empty() && key.back() == '*') {
            key.pop_back();
            const std::size_t q = value.find("''");
            if (q != std::string::npos) value = value.substr(q + 2);
        }
        out.params.emplace(std::move(key), std::move(value));
    }
    return out;
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string decode_base64(std::string_view in) {
    static const std::array<int, 256> table = [] {
        std::array<int, 256> t{};
        t.fill(-1);
        const char* alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
        for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(alphabet[i])] = i;
        t[static_cast<unsigned char>('-')] = 62;
        t[static_cast<unsigned char>('_')] = 63;
        return t;
    }();
    std::string out;
    out.reserve(in.size() * 3 / 4);
    std::uint32_t acc = 0;
    int bits = 0;
    for (unsigned char c : in) {
        if (c == '=') break;
        const int v = table[c];
        if (v < 0) continue;
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((acc >> bits) & 0xff));
        }
    }
    return out;
}

std::string decode_quoted_printable(std::string_view in, bool underscore_is_space) {
    std::string out;
    out.reserve(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const char c = in[i];
        if (c == '_' && underscore_is_space) {
            out.push_back(' ');
        } else if (c == '=') {
            if (i + 1 < in.size() && in[i + 1] == '\n') {
                i += 1;
            } else if (i + 2 < in.size() && in[i + 1] == '\r' && in[i + 2] == '\n') {
                i += 2;
            } else if (i + 2 < in.size() && hex_value(in[i + 1]) >= 0 && hex_value(in[i + 2]) >= 0) {
                out.push_back(static_cast<char>(hex_value(in[i + 1]) * 16 + hex_value(in[i + 2])));
                i += 2;
            } else {
                out.push_back(c);
            }
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::string decode_transfer(std::string_view body, std::string_view encoding) {
    if (iequals(encoding, "base64")) return decode_base64(body);
    if (iequals(encoding, "quoted-printable")) return decode_quoted_printable(body, false);
    return std::string(body);
}

std::string latin1_to_utf8(std::string_view bytes) {
    std::string out;
    out.reserve(bytes.size());
    for (unsigned char c : bytes) utf8::append(out, c);
    return out;
}

/// Converts `bytes` in `charset` to UTF-8. Charsets that are byte-compatible
/// with ASCII fall back to Latin-1 on decode failure; the rest raise.
std::string to_utf8(std::string_view bytes, std::string_view charset, std::size_t offset) {
    const std::string cs = to_lower_ascii(trim(charset));
    if (cs.empty() || cs == "utf-8" || cs == "utf8" || cs == "us-ascii" || cs == "ascii") {
        if (utf8::valid(bytes)) return std::string(bytes);
        return latin1_to_utf8(bytes);
    }
    if (cs == "iso-8859-1" || cs == "latin1" || cs == "latin-1" || cs == "iso8859-1") {
        return latin1_to_utf8(bytes);
    }
    UErrorCode status = U_ZERO_ERROR;
    UConverter* conv = ucnv_open(cs.c_str(), &status);
    if (U_FAILURE(status) || conv == nullptr) {
        return utf8::valid(bytes) ? std::string(bytes) : latin1_to_utf8(bytes);
    }
    const int min_char = ucnv_getMinCharSize(conv);
    ucnv_setToUCallBack(conv, UCNV_TO_U_CALLBACK_STOP, nullptr, nullptr, nullptr, &status);
    std::u16string wide(bytes.size() * 2 + 4, u'\0');
    status = U_ZERO_ERROR;
    const int32_t n = ucnv_toUChars(conv, wide.data(), static_cast<int32_t>(wide.size()), bytes.data(),
                                    static_cast<int32_t>(bytes.size()), &status);
    ucnv_close(conv);
    if (U_FAILURE(status)) {
        if (min_char == 1) return latin1_to_utf8(bytes);
        throw UnsupportedEncoding("cannot decode charset " + cs, offset);
    }
    std::string out(static_cast<std::size_t>(n) * 3 + 4, '\0');
    int32_t written = 0;
    status = U_ZERO_ERROR;
    u_strToUTF8(out.data(), static_cast<int32_t>(out.size()), &written, wide.data(), n, &status);
    if (U_FAILURE(status)) throw UnsupportedEncoding("cannot transcode charset " + cs, offset);
    out.resize(static_cast<std::size_t>(written));
    return out;
}

/// RFC 2047 encoded words inside a header value.
std::string decode_header_words(std::string_view value) {
    std::string out;
    std::size_t pos = 0;
    bool last_was_word = false;
    while (pos < value.size()) {
        const std::size_t start = value.find("=?", pos);
        if (start == std::string_view::npos) {
            out.append(value.substr(pos));
            break;
        }
        const std::size_t q1 = value.find('?', start + 2);
        const std::size_t q2 = q1 == std::string_view::npos ? q1 : value.find('?', q1 + 1);
        const std::size_t end = q2 == std::string_view::npos ? q2 : value.find("?=", q2 + 1);
        if (end == std::string_view::npos || q2 != q1 + 2) {
            out.append(value.substr(pos));
            break;
        }
        std::string_view between = value.substr(pos, start - pos);
        // Whitespace between adjacent encoded words is dropped.
        if (!(last_was_word && trim(between).empty())) out.append(between);
        const std::string_view charset = value.substr(start + 2, q1 - start - 2);
        const char mode = value[q1 + 1];
        const std::string_view payload = value.substr(q2 + 1, end - q2 - 1);
        std::string bytes = (mode == 'B' || mode == 'b') ? decode_base64(payload)
                                                         : decode_quoted_printable(payload, true);
        try {
            out.append(to_utf8(bytes, charset, 0));
        } catch (const UnsupportedEncoding&) {
            out.append(latin1_to_utf8(bytes));
        }
        pos = end + 2;
        last_was_word = true;
    }
    if (!utf8::valid(out)) return latin1_to_utf8(out);
    return out;
}

std::vector<std::string> split_address_list(std::string_view value) {
    std::vector<std::string> out;
    std::string current;
    bool quoted = false;
    int angle = 0;
    for (char c : value) {
        if (c == '"') quoted = !quoted;
        if (!quoted && c == '<') ++angle;
        if (!quoted && c == '>' && angle > 0) --angle;
        if (c == ',' && !quoted && angle == 0) {
            out.push_back(current);
            current.clear();
            continue;
        }
        current.push_back(c);
    }
    out.push_back(current);
    return out;
}

AuthResult auth_token(std::string_view value) {
    const std::string v = to_lower_ascii(value);
    if (v == "pass") return AuthResult::Pass;
    if (v == "none" || v.empty()) return AuthResult::Absent;
    return AuthResult::Fail;
}

void read_auth_results(std::string_view value, AuthFlags& flags) {
    std::size_t pos = 0;
    while (pos < value.size()) {
        while (pos < value.size() && (value[pos] == ' ' || value[pos] == ';' || value[pos] == '\t')) ++pos;
        const std::size_t start = pos;
        while (pos < value.size() && value[pos] != ' ' && value[pos] != ';' && value[pos] != '\t') ++pos;
        const std::string_view token = value.substr(start, pos - start);
        const std::size_t eq = token.find('=');
        if (eq == std::string_view::npos) continue;
        const std::string method = to_lower_ascii(token.substr(0, eq));
        const AuthResult result = auth_token(token.substr(eq + 1));
        if (method == "spf") flags.spf = result;
        else if (method == "dkim") flags.dkim = result;
        else if (method == "dmarc") flags.dmarc = result;
    }
}

std::string ensure_utf8(std::string s) {
    return utf8::valid(s) ? s : latin1_to_utf8(s);
}

std::string strip_angle(std::string_view v) {
    v = trim(v);
    if (!v.empty() && v.front() == '<') v.remove_prefix(1);
    const std::size_t close = v.find('>');
    if (close != std::string_view::npos) v = v.substr(0, close);
    return ensure_utf8(std::string(trim(v)));
}

struct BodyCollector {
    std::vector<std::string> texts;
    std::vector<std::string> hrefs;
    std::vector<AttachmentRecord> attachments;
};

void collect_part(const HeaderBlock& headers, std::string_view body, std::size_t offset, int depth,
                  BodyCollector& out);

void collect_multipart(std::string_view body, const std::string& boundary, std::size_t offset, int depth,
                       bool alternative, BodyCollector& out) {
    const std::string delimiter = "--" + boundary;
    std::vector<std::pair<std::size_t, std::size_t>> parts;  // [begin, end) of each part
    std::size_t pos = 0;
    std::optional<std::size_t> part_start;
    while (pos <= body.size()) {
        std::size_t eol = body.find('\n', pos);
        if (eol == std::string_view::npos) eol = body.size();
        std::string_view line = body.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.starts_with(delimiter)) {
            const std::string_view rest = line.substr(delimiter.size());
            if (part_start) parts.emplace_back(*part_start, pos);
            if (rest.starts_with("--")) {
                part_start.reset();
                break;
            }
            part_start = eol + 1 <= body.size() ? eol + 1 : body.size();
        }
        if (eol >= body.size()) break;
        pos = eol + 1;
    }
    if (part_start && *part_start < body.size()) parts.emplace_back(*part_start, body.size());

    BodyCollector local;
    BodyCollector& target = alternative ? local : out;
    for (const auto& [begin, end] : parts) {
        std::string_view part = body.substr(begin, end - begin);
        // A part's trailing line break belongs to the following delimiter.
        if (part.ends_with("\r\n")) part.remove_suffix(2);
        else if (part.ends_with("\n")) part.remove_suffix(1);
        const auto sep = find_separator(part);
        HeaderBlock part_headers;
        std::string_view part_body;
        if (sep) {
            part_headers = parse_headers(part.substr(0, sep->first));
            part_body = part.substr(sep->second);
        } else {
            part_body = part;  // headerless part: plain text per RFC 2046 defaults
        }
        const std::size_t body_offset = offset + begin + (sep ? sep->second : 0);
        if (alternative) {
            BodyCollector alt;
            collect_part(part_headers, part_body, body_offset, depth + 1, alt);
            // Alternatives carry the same content; keep the last rendering's text
            // but harvest links and attachments from all of them.
            if (!alt.texts.empty()) local.texts = std::move(alt.texts);
            local.hrefs.insert(local.hrefs.end(), alt.hrefs.begin(), alt.hrefs.end());
            local.attachments.insert(local.attachments.end(), alt.attachments.begin(), alt.attachments.end());
        } else {
            collect_part(part_headers, part_body, body_offset, depth + 1, target);
        }
    }
    if (alternative) {
        out.texts.insert(out.texts.end(), local.texts.begin(), local.texts.end());
        out.hrefs.insert(out.hrefs.end(), local.hrefs.begin(), local.hrefs.end());
        out.attachments.insert(out.attachments.end(), local.attachments.begin(), local.attachments.end());
    }
}

void collect_part(const HeaderBlock& headers, std::string_view body, std::size_t offset, int depth,
                  BodyCollector& out) {
    const std::string* ct_header = headers.first("content-type");
    ParamValue ct = ct_header ? parse_param_value(*ct_header) : ParamValue{"text/plain", {}};
    if (ct.value.empty()) ct.value = "text/plain";
    const std::string* cte = headers.first("content-transfer-encoding");
    const std::string encoding = cte ? std::string(trim(*cte)) : std::string();
    const std::string* cd_header = headers.first("content-disposition");
    const ParamValue cd = cd_header ? parse_param_value(*cd_header) : ParamValue{};

    if (ct.value.starts_with("multipart/") && depth < kMaxMimeDepth) {
        const auto boundary = ct.params.find("boundary");
        if (boundary != ct.params.end() && !boundary->second.empty()) {
            collect_multipart(body, boundary->second, offset, depth, ct.value == "multipart/alternative", out);
            return;
        }
    }

    std::string filename;
    if (auto it = cd.params.find("filename"); it != cd.params.end()) filename = it->second;
    else if (auto it2 = ct.params.find("name"); it2 != ct.params.end()) filename = it2->second;
    const bool is_text = ct.value == "text/plain" || ct.value == "text/html";
    const bool attachment = cd.value == "attachment" || !filename.empty() || !is_text;

    const std::string decoded = decode_transfer(body, encoding);
    if (attachment) {
        AttachmentRecord rec;
        rec.filename = decode_header_words(filename);
        rec.mime_type = ct.value;
        rec.digest = sha256_hex(decoded);
        rec.size_bytes = decoded.size();
        out.attachments.push_back(std::move(rec));
        return;
    }
    const auto charset = ct.params.find("charset");
    std::string text = to_utf8(decoded, charset == ct.params.end() ? "" : charset->second, offset);
    if (ct.value == "text/html") text = html_to_text(text, out.hrefs);
    out.texts.push_back(std::move(text));
}

std::string normalize_newlines(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '\r') {
            if (i + 1 < text.size() && text[i + 1] == '\n') continue;
            out.push_back('\n');
            continue;
        }
        out.push_back(text[i]);
    }
    return out;
}

int month_index(std::string_view name) {
    static constexpr std::array<std::string_view, 12> kMonths = {"jan", "feb", "mar", "apr", "may", "jun",
                                                                 "jul", "aug", "sep", "oct", "nov", "dec"};
    if (name.size() < 3) return -1;
    for (int i = 0; i < 12; ++i) {
        if (iequals(name.substr(0, 3), kMonths[i])) return i + 1;
    }
    return -1;
}

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

int to_int(std::string_view s) {
    int v = 0;
    for (char c : s) {
        v = v * 10 + (c - '0');
        if (v > 100000) return v;
    }
    return v;
}

}  // namespace

std::optional<std::int64_t> parse_rfc5322_date(std::string_view text) {
    std::string cleaned;
    int depth = 0;
    for (char c : text) {
        if (c == '(') ++depth;
        else if (c == ')' && depth > 0) --depth;
        else if (depth == 0) cleaned.push_back(c == ',' ? ' ' : c);
    }
    std::vector<std::string_view> tokens;
    for (std::string_view t : split(cleaned, ' ')) {
        t = trim(t);
        if (!t.empty()) tokens.push_back(t);
    }
    std::size_t i = 0;
    if (i < tokens.size() && !all_digits(tokens[i])) ++i;  // optional day-of-week
    if (tokens.size() < i + 4) return std::nullopt;
    if (!all_digits(tokens[i]) || tokens[i].size() > 2) return std::nullopt;
    const int day = to_int(tokens[i]);
    const int month = month_index(tokens[i + 1]);
    if (month < 0 || !all_digits(tokens[i + 2])) return std::nullopt;
    int year = to_int(tokens[i + 2]);
    if (tokens[i + 2].size() == 2) year += year < 50 ? 2000 : 1900;
    else if (tokens[i + 2].size() == 3) year += 1900;
    else if (tokens[i + 2].size() != 4) return std::nullopt;

    const auto hms = split(tokens[i + 3], ':');
    if (hms.size() < 2 || hms.size() > 3) return std::nullopt;
    for (auto part : hms) {
        if (!all_digits(part) || part.size() > 2) return std::nullopt;
    }
    const int hour = to_int(hms[0]);
    const int minute = to_int(hms[1]);
    const int second = hms.size() == 3 ? to_int(hms[2]) : 0;
    if (hour > 23 || minute > 59 || second > 60) return std::nullopt;

    static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    const int month_days = kDays[month - 1] + (month == 2 && leap ? 1 : 0);
    if (day < 1 || day > month_days) return std::nullopt;

    std::int64_t offset_seconds = 0;
    if (tokens.size() > i + 4) {
        const std::string_view zone = tokens[i + 4];
        if ((zone[0] == '+' || zone[0] == '-') && zone.size() == 5 && all_digits(zone.substr(1))) {
            const int hh = to_int(zone.substr(1, 2));
            const int mm = to_int(zone.substr(3, 2));
            if (mm > 59) return std::nullopt;
            offset_seconds = (hh * 3600 + mm * 60) * (zone[0] == '-' ? -1 : 1);
        } else {
            static const std::unordered_map<std::string, int> kZones = {
                {"ut", 0},   {"utc", 0},  {"gmt", 0},  {"z", 0},    {"est", -5}, {"edt", -4},
                {"cst", -6}, {"cdt", -5}, {"mst", -7}, {"mdt", -6}, {"pst", -8}, {"pdt", -7}};
            const auto it = kZones.find(to_lower_ascii(zone));
            if (it != kZones.end()) offset_seconds = it->second * 3600;
        }
    }
    const std::int64_t days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
    return days * 86400 + hour * 3600 + minute * 60 + second - offset_seconds;
}

std::string format_rfc5322_date(std::int64_t epoch_seconds) {
    static constexpr const char* kWeekdays[] = {"Thu", "Fri", "Sat", "Sun", "Mon", "Tue", "Wed"};
    static constexpr const char* kMonths[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                              "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
    std::int64_t days = epoch_seconds / 86400;
    std::int64_t rem = epoch_seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    const int weekday = static_cast<int>(((days % 7) + 7) % 7);
    // civil_from_days
    const std::int64_t z = days + 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    y += m <= 2;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s, %02u %s %04lld %02d:%02d:%02d +0000", kWeekdays[weekday], d,
                  kMonths[m - 1], static_cast<long long>(y), static_cast<int>(rem / 3600),
                  static_cast<int>((rem / 60) % 60), static_cast<int>(rem % 60));
    return buf;
}

std::string normalize_address(std::string_view value) {
    std::string_view v = trim(value);
    const std::size_t open = v.rfind('<');
    if (open != std::string_view::npos) {
        const std::size_t close = v.find('>', open);
        v = v.substr(open + 1, close == std::string_view::npos ? std::string_view::npos : close - open - 1);
    } else {
        // Bare form, possibly "a@b.c (Name)".
        const std::size_t paren = v.find('(');
        if (paren != std::string_view::npos) v = v.substr(0, paren);
        for (std::string_view token : split(v, ' ')) {
            if (token.find('@') != std::string_view::npos) {
                v = token;
                break;
            }
        }
    }
    v = trim(v);
    while (!v.empty() && (v.front() == '"' || v.front() == '\'')) v.remove_prefix(1);
    while (!v.empty() && (v.back() == '"' || v.back() == '\'' || v.back() == ',')) v.remove_suffix(1);
    return to_lower_ascii(v);
}

std::string domain_of(std::string_view address) {
    const std::size_t at = address.rfind('@');
    if (at == std::string_view::npos) return {};
    return to_lower_ascii(address.substr(at + 1));
}

bool is_shortener_host(std::string_view host) {
    static constexpr std::array<std::string_view, 16> kShorteners = {
        "bit.ly", "tinyurl.com", "goo.gl", "t.co",     "ow.ly", "is.gd",       "buff.ly", "rebrand.ly",
        "cutt.ly", "tiny.cc",    "rb.gy",  "shorturl.at", "bl.ink", "t.ly", "s.id", "lnkd.in"};
    return std::find(kShorteners.begin(), kShorteners.end(), host) != kShorteners.end();
}

bool is_homograph_host(std::string_view host) {
    bool ascii_letter = false;
    bool non_ascii = false;
    for (std::string_view label : split(host, '.')) {
        if (istarts_with(label, "xn--")) return true;
    }
    for (unsigned char c : host) {
        if (c >= 0x80) non_ascii = true;
        else if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) ascii_letter = true;
    }
    return non_ascii && ascii_letter;
}

std::string url_host(std::string_view raw) {
    std::string_view rest = raw;
    const std::size_t scheme = rest.find("://");
    if (scheme != std::string_view::npos) rest = rest.substr(scheme + 3);
    const std::size_t end = rest.find_first_of("/?#");
    std::string_view authority = rest.substr(0, end);
    const std::size_t at = authority.rfind('@');
    if (at != std::string_view::npos) authority = authority.substr(at + 1);
    if (!authority.empty() && authority.front() == '[') {
        const std::size_t close = authority.find(']');
        return to_lower_ascii(authority.substr(0, close == std::string_view::npos ? authority.size() : close + 1));
    }
    const std::size_t colon = authority.find(':');
    if (colon != std::string_view::npos) authority = authority.substr(0, colon);
    while (!authority.empty() && authority.back() == '.') authority.remove_suffix(1);
    return to_lower_ascii(authority);
}

UrlRecord make_url_record(std::string_view raw) {
    UrlRecord rec;
    rec.raw = std::string(raw);
    rec.host = url_host(raw);
    rec.is_shortened = is_shortener_host(rec.host);
    rec.is_homograph_suspect = is_homograph_host(rec.host);
    return rec;
}

std::vector<std::string> find_urls(std::string_view text) {
    std::vector<std::string> out;
    const auto push_unique = [&](std::string url) {
        if (std::find(out.begin(), out.end(), url) == out.end()) out.push_back(std::move(url));
    };
    const auto is_terminator = [](unsigned char c) {
        return c <= ' ' || c == '"' || c == '\'' || c == '<' || c == '>' || c == '(' || c == ')' || c == '[' ||
               c == ']' || c == '{' || c == '}' || c == '|' || c == '\\' || c == '^' || c == '`';
    };
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t best = std::string_view::npos;
        for (std::string_view marker : {std::string_view("http://"), std::string_view("https://"),
                                        std::string_view("www.")}) {
            std::size_t at = pos;
            while (true) {
                at = text.find(marker, at);
                if (at == std::string_view::npos) break;
                // "www." must start a word and not be the tail of an http URL already found.
                if (marker == "www." && at > 0 && !is_terminator(static_cast<unsigned char>(text[at - 1]))) {
                    at += marker.size();
                    continue;
                }
                break;
            }
            if (at != std::string_view::npos && (best == std::string_view::npos || at < best)) best = at;
        }
        if (best == std::string_view::npos) break;
        std::size_t end = best;
        while (end < text.size() && !is_terminator(static_cast<unsigned char>(text[end]))) ++end;
        std::string_view url = text.substr(best, end - best);
        while (!url.empty() && (url.back() == '.' || url.back() == ',' || url.back() == ';' || url.back() == ':' ||
                                url.back() == '!' || url.back() == '?')) {
            url.remove_suffix(1);
        }
        const bool has_host = url.size() > 8 || (url.starts_with("www.") && url.size() > 4);
        if (has_host && !url_host(url).empty()) push_unique(std::string(url));
        pos = end > best ? end : best + 1;
    }
    return out;
}

std::string html_to_text(std::string_view html, std::vector<std::string>& hrefs) {
    std::string out;
    std::size_t pos = 0;
    const auto decode_entity = [&](std::size_t at, std::size_t& next) -> std::string {
        const std::size_t semi = html.find(';', at);
        if (semi == std::string_view::npos || semi - at > 10) {
            next = at + 1;
            return "&";
        }
        const std::string_view name = html.substr(at + 1, semi - at - 1);
        next = semi + 1;
        if (name == "amp") return "&";
        if (name == "lt") return "<";
        if (name == "gt") return ">";
        if (name == "quot") return "\"";
        if (name == "apos" || name == "#39") return "'";
        if (name == "nbsp") return " ";
        if (name.size() > 1 && name[0] == '#') {
            char32_t cp = 0;
            const bool hex = name[1] == 'x' || name[1] == 'X';
            for (char c : name.substr(hex ? 2 : 1)) {
                const int v = hex ? hex_value(c) : (c >= '0' && c <= '9' ? c - '0' : -1);
                if (v < 0 || cp > 0x10ffff) {
                    next = at + 1;
                    return "&";
                }
                cp = cp * (hex ? 16 : 10) + static_cast<char32_t>(v);
            }
            if (cp == 0 || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) cp = 0xfffd;
            std::string s;
            utf8::append(s, cp);
            return s;
        }
        next = at + 1;
        return "&";
    };
    while (pos < html.size()) {
        const char c = html[pos];
        if (c == '<') {
            const std::size_t close = html.find('>', pos);
            if (close == std::string_view::npos) break;
            const std::string_view tag = html.substr(pos + 1, close - pos - 1);
            const std::string lower = to_lower_ascii(tag);
            if (lower.starts_with("script") || lower.starts_with("style")) {
                const std::string end_tag = lower.starts_with("script") ? "</script" : "</style";
                std::size_t search = close;
                std::size_t end_at = std::string_view::npos;
                while (search < html.size()) {
                    const std::size_t lt = html.find("</", search);
                    if (lt == std::string_view::npos) break;
                    if (istarts_with(html.substr(lt), end_tag)) {
                        end_at = lt;
                        break;
                    }
                    search = lt + 2;
                }
                if (end_at == std::string_view::npos) break;
                const std::size_t end_close = html.find('>', end_at);
                pos = end_close == std::string_view::npos ? html.size() : end_close + 1;
                continue;
            }
            const std::size_t href = lower.find("href");
            if (href != std::string::npos) {
                std::size_t p = href + 4;
                while (p < tag.size() && (tag[p] == ' ' || tag[p] == '=')) ++p;
                if (p < tag.size()) {
                    const char quote = tag[p];
                    std::size_t end;
                    if (quote == '"' || quote == '\'') {
                        ++p;
                        end = tag.find(quote, p);
                    } else {
                        end = tag.find_first_of(" \t\n>", p);
                    }
                    if (end == std::string_view::npos) end = tag.size();
                    std::string target(tag.substr(p, end - p));
                    if (istarts_with(target, "http://") || istarts_with(target, "https://") ||
                        istarts_with(target, "www.")) {
                        hrefs.push_back(std::move(target));
                    }
                }
            }
            if (lower.starts_with("br") || lower.starts_with("p") || lower.starts_with("/p") ||
                lower.starts_with("div") || lower.starts_with("/div") || lower.starts_with("li")) {
                out.push_back('\n');
            } else {
                out.push_back(' ');
            }
            pos = close + 1;
        } else if (c == '&') {
            std::size_t next = pos + 1;
            out.append(decode_entity(pos, next));
            pos = next;
        } else {
            out.push_back(c);
            ++pos;
        }
    }
    // Collapse runs of spaces introduced by tag removal.
    std::string collapsed;
    collapsed.reserve(out.size());
    for (char ch : out) {
        if (ch == ' ' && !collapsed.empty() && (collapsed.back() == ' ' || collapsed.back() == '\n')) continue;
        collapsed.push_back(ch);
    }
    return std::string(trim(collapsed));
}

std::vector<std::string_view> split_mbox(std::string_view mbox) {
    std::vector<std::string_view> entries;
    std::size_t pos = 0;
    std::optional<std::size_t> start;
    while (pos < mbox.size()) {
        std::size_t eol = mbox.find('\n', pos);
        if (eol == std::string_view::npos) eol = mbox.size();
        const bool at_line_start = pos == 0 || mbox[pos - 1] == '\n';
        if (at_line_start && mbox.substr(pos).starts_with("From ")) {
            if (start) entries.push_back(mbox.substr(*start, pos - *start));
            start = pos;
        }
        pos = eol + 1;
    }
    if (start && *start < mbox.size()) entries.push_back(mbox.substr(*start));
    return entries;
}

void assign_unique_ids(std::vector<EmailDocument>& docs) {
    std::unordered_map<std::string, int> seen;
    for (auto& doc : docs) {
        const int count = ++seen[doc.id];
        if (count > 1) doc.id += "#" + std::to_string(count);
    }
}

EmailDocument parse_email(std::string_view raw, MessageFormat format) {
    if (raw.empty()) throw MalformedMessage("empty message", 0);
    std::size_t base = 0;
    std::string unescaped;
    std::string_view message = raw;
    if (format == MessageFormat::MboxEntry) {
        if (raw.starts_with("From ")) {
            const std::size_t eol = raw.find('\n');
            if (eol == std::string_view::npos) throw MalformedMessage("mbox entry without message", raw.size());
            base = eol + 1;
        }
        // Undo mboxrd quoting of body lines.
        std::string_view rest = raw.substr(base);
        unescaped.reserve(rest.size());
        std::size_t pos = 0;
        while (pos < rest.size()) {
            std::size_t eol = rest.find('\n', pos);
            if (eol == std::string_view::npos) eol = rest.size();
            std::string_view line = rest.substr(pos, eol - pos);
            std::size_t q = 0;
            while (q < line.size() && line[q] == '>') ++q;
            if (q > 0 && line.substr(q).starts_with("From ")) line.remove_prefix(1);
            unescaped.append(line);
            if (eol < rest.size()) unescaped.push_back('\n');
            pos = eol + 1;
        }
        message = unescaped;
    }

    const auto sep = find_separator(message);
    if (!sep) throw MalformedMessage("no header/body separator", base + message.size());
    const HeaderBlock headers = parse_headers(message.substr(0, sep->first));
    if (headers.headers.empty()) throw MalformedMessage("no headers before separator", base);
    const std::string_view body = message.substr(sep->second);

    EmailDocument doc;
    doc.raw_hash = sha256_hex(raw);
    doc.id = doc.raw_hash.substr(0, 16);
    if (const auto* v = headers.first("from")) {
        doc.sender_address = ensure_utf8(normalize_address(decode_header_words(*v)));
        doc.sender_domain = domain_of(doc.sender_address);
    }
    for (const char* name : {"to", "cc"}) {
        for (const auto& h : headers.headers) {
            if (h.name != name) continue;
            for (const auto& item : split_address_list(h.value)) {
                std::string addr = ensure_utf8(normalize_address(item));
                if (!addr.empty() && std::find(doc.recipient_addresses.begin(), doc.recipient_addresses.end(),
                                               addr) == doc.recipient_addresses.end()) {
                    doc.recipient_addresses.push_back(std::move(addr));
                }
            }
        }
    }
    if (const auto* v = headers.first("reply-to")) {
        std::string addr = ensure_utf8(normalize_address(*v));
        if (!addr.empty()) doc.reply_to = std::move(addr);
    }
    if (const auto* v = headers.first("subject")) doc.subject = decode_header_words(*v);
    if (const auto* v = headers.first("date")) doc.timestamp = parse_rfc5322_date(*v);
    if (const auto* v = headers.first("message-id")) doc.message_id = strip_angle(*v);
    if (const auto* v = headers.first("in-reply-to")) doc.in_reply_to = strip_angle(*v);
    for (const auto& h : headers.headers) {
        if (h.name == "authentication-results") read_auth_results(h.value, doc.auth);
        if (h.name == "received-spf" && doc.auth.spf == AuthResult::Absent) {
            const std::string_view first_word = split(trim(h.value), ' ').front();
            doc.auth.spf = auth_token(first_word);
        }
    }
    if (const auto* v = headers.first("x-evomail-label")) {
        const std::string l = to_lower_ascii(trim(*v));
        if (l == "spam" || l == "1") doc.label = Label::Spam;
        else if (l == "ham" || l == "0") doc.label = Label::Ham;
    }
    if (const auto* v = headers.first("x-evomail-campaign")) doc.campaign = ensure_utf8(std::string(trim(*v)));

    BodyCollector collected;
    collect_part(headers, body, base + sep->second, 0, collected);
    std::string text;
    for (const auto& part : collected.texts) {
        if (!text.empty()) text.push_back('\n');
        text.append(normalize_newlines(part));
    }
    doc.body = std::string(trim(text));

    std::vector<std::string> urls = find_urls(doc.subject);
    for (auto& u : find_urls(doc.body)) {
        if (std::find(urls.begin(), urls.end(), u) == urls.end()) urls.push_back(std::move(u));
    }
    for (auto& u : collected.hrefs) {
        if (std::find(urls.begin(), urls.end(), u) == urls.end()) urls.push_back(std::move(u));
    }
    for (const auto& u : urls) doc.urls.push_back(make_url_record(u));

    for (auto& att : collected.attachments) {
        const bool dup = std::any_of(doc.attachments.begin(), doc.attachments.end(), [&](const auto& a) {
            return a.filename == att.filename && a.digest == att.digest;
        });
        if (!dup) doc.attachments.push_back(std::move(att));
    }
    return doc;
}

}  // namespace evomail
