#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace evomail {

enum class AuthResult : std::uint8_t { Absent = 0, Pass = 1, Fail = 2 };

struct AuthFlags {
    AuthResult spf = AuthResult::Absent;
    AuthResult dkim = AuthResult::Absent;
    AuthResult dmarc = AuthResult::Absent;

    bool operator==(const AuthFlags&) const = default;
};

enum class Label : std::uint8_t { Ham = 0, Spam = 1 };

struct UrlRecord {
    std::string raw;
    std::string host;
    bool is_shortened = false;
    bool is_homograph_suspect = false;

    bool operator==(const UrlRecord&) const = default;
};

struct AttachmentRecord {
    std::string filename;
    std::string mime_type;
    std::string digest;  // sha-256 hex of the decoded bytes
    std::uint64_t size_bytes = 0;

    bool operator==(const AttachmentRecord&) const = default;
};

/// One parsed message. Absent headers stay absent (empty optional or empty
/// string for the address fields), they are never defaulted.
struct EmailDocument {
    std::string id;
    std::string raw_hash;
    std::string message_id;
    std::string in_reply_to;
    std::string subject;
    std::string body;
    std::string sender_address;
    std::string sender_domain;
    std::vector<std::string> recipient_addresses;
    std::optional<std::string> reply_to;
    std::optional<std::int64_t> timestamp;
    std::vector<UrlRecord> urls;
    std::vector<AttachmentRecord> attachments;
    AuthFlags auth;
    std::optional<Label> label;
    /// Campaign/template tag carried by synthetic corpora (X-Evomail-Campaign).
    std::string campaign;

    bool operator==(const EmailDocument&) const = default;
};

enum class MessageFormat { Eml, MboxEntry };

/// Parses one RFC 5322 message. Throws MalformedMessage when there is no
/// header/body separator and UnsupportedEncoding when a part's charset cannot
/// be decoded and is not byte-compatible with the Latin-1 fallback.
EmailDocument parse_email(std::string_view raw, MessageFormat format = MessageFormat::Eml);

/// Splits an mbox stream on "From " separator lines. Each entry keeps its
/// separator line, suitable for parse_email(..., MboxEntry).
std::vector<std::string_view> split_mbox(std::string_view mbox);

/// Makes document ids unique within a corpus by suffixing repeats ("#2", ...).
void assign_unique_ids(std::vector<EmailDocument>& docs);

UrlRecord make_url_record(std::string_view raw);
std::string url_host(std::string_view raw);
bool is_shortener_host(std::string_view host);
bool is_homograph_host(std::string_view host);
/// URLs found in free text, deduplicated by exact string, in order of appearance.
std::vector<std::string> find_urls(std::string_view text);

/// Visible text of an HTML fragment; href targets are appended to `hrefs`.
std::string html_to_text(std::string_view html, std::vector<std::string>& hrefs);

/// RFC 5322 date-time to seconds since the epoch (UTC); nullopt if unparseable.
std::optional<std::int64_t> parse_rfc5322_date(std::string_view text);
/// Inverse used by writers: "Mon, 01 Jan 2024 00:00:00 +0000".
std::string format_rfc5322_date(std::int64_t epoch_seconds);

/// Lowercased bare address out of a header value like `"Name" <a@b.c>`.
std::string normalize_address(std::string_view value);
std::string domain_of(std::string_view address);

}  // namespace evomail
