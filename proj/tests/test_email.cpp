#include <doctest.h>

#include "evomail/email.hpp"
#include "evomail/error.hpp"
#include "evomail/util.hpp"

using namespace evomail;

namespace {

const char* kMinimal =
    "From: a@x.com\nTo: b@y.com\nSubject: hi\nDate: Mon, 01 Jan 2024 00:00:00 +0000\n\nhello";

}

TEST_CASE("minimal message") {
    const auto doc = parse_email(kMinimal);
    CHECK(doc.sender_address == "a@x.com");
    CHECK(doc.sender_domain == "x.com");
    CHECK(doc.body == "hello");
    CHECK(doc.subject == "hi");
    CHECK(doc.urls.empty());
    REQUIRE(doc.recipient_addresses.size() == 1);
    CHECK(doc.recipient_addresses[0] == "b@y.com");
    REQUIRE(doc.timestamp);
    CHECK(*doc.timestamp == 1704067200);
    CHECK_FALSE(doc.reply_to);
    CHECK_FALSE(doc.label);
    CHECK(doc.raw_hash == sha256_hex(kMinimal));
}

TEST_CASE("shortened url") {
    const auto doc = parse_email("From: a@x.com\n\nclick http://bit.ly/z");
    REQUIRE(doc.urls.size() == 1);
    CHECK(doc.urls[0].host == "bit.ly");
    CHECK(doc.urls[0].is_shortened);
    CHECK_FALSE(doc.urls[0].is_homograph_suspect);
}

TEST_CASE("authentication results") {
    const auto doc = parse_email(
        "From: a@x.com\nAuthentication-Results: mx.example; spf=fail smtp.mailfrom=x.com; dkim=pass\n\nbody");
    CHECK(doc.auth.spf == AuthResult::Fail);
    CHECK(doc.auth.dkim == AuthResult::Pass);
    CHECK(doc.auth.dmarc == AuthResult::Absent);
}

TEST_CASE("absent headers stay absent") {
    const auto doc = parse_email("Subject: only\n\nx");
    CHECK(doc.sender_address.empty());
    CHECK(doc.sender_domain.empty());
    CHECK_FALSE(doc.timestamp);
    CHECK(doc.auth == AuthFlags{});
}

TEST_CASE("unparseable date is absent, not epoch 0") {
    const auto doc = parse_email("From: a@x.com\nDate: not a date\n\nx");
    CHECK_FALSE(doc.timestamp);
}

TEST_CASE("sender domain is the lowercased domain part") {
    const auto doc = parse_email("From: \"Alice\" <Alice@Example.COM>\n\nx");
    CHECK(doc.sender_address == "alice@example.com");
    CHECK(doc.sender_domain == "example.com");
    CHECK(doc.sender_domain == domain_of(doc.sender_address));
}

TEST_CASE("missing separator is malformed") {
    CHECK_THROWS_AS(parse_email("From: a@x.com"), MalformedMessage);
    CHECK_THROWS_AS(parse_email(""), MalformedMessage);
}

TEST_CASE("undecodable multibyte charset") {
    const std::string raw =
        "From: a@x.com\nContent-Type: text/plain; charset=utf-16le\nContent-Transfer-Encoding: base64\n\nQUJD\n";
    CHECK_THROWS_AS(parse_email(raw), UnsupportedEncoding);
}

TEST_CASE("single-byte charset falls back to latin-1") {
    const std::string raw = "From: a@x.com\nContent-Type: text/plain; charset=iso-8859-1\n\ncaf\xe9";
    CHECK(parse_email(raw).body == "caf\xc3\xa9");
}

TEST_CASE("encoded words and reply-to") {
    const auto doc = parse_email(
        "From: a@x.com\nReply-To: <Other@Y.com>\nSubject: =?UTF-8?B?aMOpbGxv?= world\n\nx");
    CHECK(doc.subject == "h\xc3\xa9llo world");
    REQUIRE(doc.reply_to);
    CHECK(*doc.reply_to == "other@y.com");
}

TEST_CASE("multipart with html, quoted-printable and attachment") {
    const std::string raw =
        "From: a@x.com\n"
        "Content-Type: multipart/mixed; boundary=\"BB\"\n\n"
        "preamble\n"
        "--BB\n"
        "Content-Type: text/plain; charset=utf-8\n"
        "Content-Transfer-Encoding: quoted-printable\n\n"
        "soft=\nbreak =3D ok\n"
        "--BB\n"
        "Content-Type: text/html\n\n"
        "<p>Visit <a href=\"https://example.org/a\">here</a> &amp; now</p>\n"
        "--BB\n"
        "Content-Type: application/pdf; name=\"x.pdf\"\n"
        "Content-Disposition: attachment; filename=\"x.pdf\"\n"
        "Content-Transfer-Encoding: base64\n\n"
        "YWJj\n"
        "--BB--\n";
    const auto doc = parse_email(raw);
    CHECK(doc.body.find("softbreak = ok") != std::string::npos);
    CHECK(doc.body.find("Visit here & now") != std::string::npos);
    CHECK(doc.body.find("<p>") == std::string::npos);
    REQUIRE(doc.urls.size() == 1);
    CHECK(doc.urls[0].raw == "https://example.org/a");
    REQUIRE(doc.attachments.size() == 1);
    CHECK(doc.attachments[0].filename == "x.pdf");
    CHECK(doc.attachments[0].mime_type == "application/pdf");
    CHECK(doc.attachments[0].size_bytes == 3);
    CHECK(doc.attachments[0].digest == sha256_hex("abc"));
}

TEST_CASE("duplicate attachments and urls collapse") {
    const std::string part =
        "--B\nContent-Type: application/octet-stream\nContent-Disposition: attachment; filename=a.bin\n"
        "Content-Transfer-Encoding: base64\n\nAAEC\n";
    const std::string raw = "From: a@x.com\nContent-Type: multipart/mixed; boundary=B\n\n" + part + part +
                            "--B\nContent-Type: text/plain\n\nhttp://e.com/x and http://e.com/x\n--B--\n";
    const auto doc = parse_email(raw);
    CHECK(doc.attachments.size() == 1);
    CHECK(doc.urls.size() == 1);
}

TEST_CASE("mbox split and quoting") {
    const std::string mbox =
        "From a@x.com Mon Jan  1 00:00:00 2024\nFrom: a@x.com\nSubject: one\n\n>From the start\n\n"
        "From b@y.com Mon Jan  1 00:00:00 2024\nFrom: b@y.com\nSubject: two\n\nbody two\n";
    const auto entries = split_mbox(mbox);
    REQUIRE(entries.size() == 2);
    const auto first = parse_email(entries[0], MessageFormat::MboxEntry);
    CHECK(first.subject == "one");
    CHECK(first.body == "From the start");
    const auto second = parse_email(entries[1], MessageFormat::MboxEntry);
    CHECK(second.sender_domain == "y.com");
}

TEST_CASE("homograph hosts") {
    CHECK(make_url_record("https://xn--pypal-4ve.com/login").is_homograph_suspect);
    CHECK(make_url_record("http://p\xd0\xb0ypal.com/").is_homograph_suspect);
    CHECK_FALSE(make_url_record("https://paypal.com/").is_homograph_suspect);
    CHECK(url_host("HTTP://User@Example.COM:8080/path?q") == "example.com");
}

TEST_CASE("find_urls dedups in order") {
    const auto urls = find_urls("see www.a.com, then http://b.org/x. and www.a.com again");
    REQUIRE(urls.size() == 2);
    CHECK(urls[0] == "www.a.com");
    CHECK(urls[1] == "http://b.org/x");
}

TEST_CASE("dates") {
    CHECK(parse_rfc5322_date("Mon, 01 Jan 2024 13:05:00 +0000") == 1704114300);
    CHECK(parse_rfc5322_date("1 Jan 2024 14:05:00 +0100") == 1704114300);
    CHECK_FALSE(parse_rfc5322_date("32 Jan 2024 00:00:00 +0000"));
    CHECK(format_rfc5322_date(1704067200) == "Mon, 01 Jan 2024 00:00:00 +0000");
    for (std::int64_t t : {0LL, 951782400LL, 1704114300LL, 4102444799LL}) {
        CHECK(parse_rfc5322_date(format_rfc5322_date(t)) == t);
    }
}

TEST_CASE("unique ids") {
    std::vector<EmailDocument> docs(3);
    for (auto& d : docs) d.id = "same";
    assign_unique_ids(docs);
    CHECK(docs[0].id == "same");
    CHECK(docs[1].id == "same#2");
    CHECK(docs[2].id == "same#3");
}

TEST_CASE("parser totality on random bytes") {
    Rng rng(5);
    int documents = 0;
    for (int i = 0; i < 2000; ++i) {
        std::string s(rng.index(200), '\0');
        for (auto& c : s) c = static_cast<char>(rng.index(256));
        if (rng.bernoulli(0.5)) s = "From: a@b.c\nContent-Type: multipart/mixed; boundary=x\n\n--x\n" + s;
        try {
            parse_email(s, rng.bernoulli(0.5) ? MessageFormat::Eml : MessageFormat::MboxEntry);
            ++documents;
        } catch (const Error&) {
        }
    }
    CHECK(documents > 0);
}
