#include "evomail/synthetic.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "evomail/error.hpp"
#include "evomail/evolution.hpp"
#include "evomail/features.hpp"
#include "evomail/util.hpp"

namespace evomail {

namespace {

struct Template {
    const char* tag;
    const char* family;
    const char* subject;
    const char* body;
};

// P1 keyword/template spam: lottery, invoice and password-reset families.
// Wording outside the marker words is shared with transactional ham.
const Template kKeywordSpam[] = {
    {"p1-lottery-1", "lottery", "{name}, you are a lottery winner",
     "Hello {name},\n\nYour account was selected as a winner in the {brand} lottery. A prize of ${amount} is "
     "reserved for you.\nTo claim it, review the details at {url}.\n\n{brand} Customer Service"},
    {"p1-lottery-2", "lottery", "Prize of ${amount} for order {ref}",
     "Dear {name},\n\nThank you for your order {ref}. Every order this {month} enters the prize draw and yours is "
     "a winner.\nClaim the prize of ${amount} at {url} before {date}.\n\n{brand}"},
    {"p1-lottery-3", "lottery", "Your {brand} jackpot is available",
     "Hi {name},\n\nA jackpot of ${amount} is available in your account. You can claim it within {days} days at "
     "{url}.\n\nThe {brand} team"},
    {"p1-lottery-4", "lottery", "Reminder: claim your prize",
     "Hello {name},\n\nWe noticed you have not claimed your lottery prize of ${amount} yet. The details and next "
     "steps are at {url}.\n\nThank you,\n{agent}"},
    {"p1-invoice-1", "invoice", "Invoice {ref} is overdue",
     "Hello {name},\n\nYour {brand} statement shows invoice {ref} for ${amount} is overdue since {date}. Please "
     "review the invoice at {url}.\n\n{brand} Billing"},
    {"p1-invoice-2", "invoice", "Unpaid invoice for order {ref}",
     "Dear {name},\n\nThe payment for order {ref} was not received and the invoice of ${amount} is unpaid.\n"
     "Review the details at {url}.\n\nThank you for your business,\n{agent}"},
    {"p1-invoice-3", "invoice", "Urgent: balance due on your account",
     "Hi {name},\n\nAn urgent reminder that the balance of ${amount} on your {brand} account is overdue. The "
     "invoice is available at {url}.\n\n{brand} Customer Service"},
    {"p1-invoice-4", "invoice", "Your {brand} invoice {ref}",
     "Hello {name},\n\nInvoice {ref} issued on {date} for ${amount} is still unpaid. You can view the invoice "
     "and payment options at {url}.\n\n{agent}"},
    {"p1-password-1", "password", "Your password expires today",
     "Hi {name},\n\nThe password for your {brand} account expires today. Please verify your details at {url} "
     "to keep access.\n\nThe {brand} security team"},
    {"p1-password-2", "password", "Action needed: verify your account",
     "Hello {name},\n\nWe noticed a new sign-in to your account and need to verify it. Your account will be "
     "suspended on {date} unless you review the activity at {url}.\n\n{brand} Support"},
    {"p1-password-3", "password", "Your account is suspended",
     "Dear {name},\n\nYour {brand} account was suspended after a failed sign-in. Verify your details and reset "
     "the password at {url}.\n\n{brand} Support"},
    {"p1-password-4", "password", "Password reset for {email}",
     "Hi {name},\n\nA password reset was requested for {email}. If this was not you, please verify the request "
     "at {url}.\n\nThe {brand} security team"},
};

// P3 paraphrase-rule templates: {a|b} picks a variant, sentences after the
// greeting may be reordered.
const Template kFluentSpam[] = {
    {"p3-storage", "fluent", "{Action needed|Attention required} on your mailbox storage",
     "Hi {name},|{We noticed|Our system detected} that your mailbox has reached its storage limit.|"
     "{To keep receiving messages|So that incoming mail is not lost}, {please review|kindly confirm} your "
     "details through the secure portal at {url}.|{Thank you for your cooperation|We appreciate your prompt "
     "attention}.|Kind regards, {brand} Support"},
    {"p3-document", "fluent", "{Shared document|A document} awaiting your review",
     "Hello {name},|{agent} has shared a document with you regarding the {topic} proposal.|"
     "{The file is attached|You can find the file attached} and a copy is available at {url}.|"
     "{Please take a look before|Your feedback is requested by} {date}.|Best, {agent}"},
    {"p3-balance", "fluent", "{Outstanding balance|Balance due} on your {brand} subscription",
     "Dear {name},|{Our billing platform|The billing system} was unable to process the renewal of your "
     "subscription.|An outstanding balance of ${amount} {remains on file|is pending}.|"
     "{Update your payment method|Review the charge} at {url} to avoid interruption.|{brand} Billing"},
    {"p3-security", "fluent", "Security {notice|alert} for your {brand} profile",
     "Hello {name},|{We detected|There was} a sign-in to your {brand} profile from a new device.|"
     "{If this was you, no action is needed|If you recognise this activity you can ignore this message}.|"
     "{Otherwise, please secure your profile|If not, review the activity} at {url}.|{brand} Trust Team"},
    {"p3-payroll", "fluent", "Payroll adjustment for {month}",
     "Hi {name},|Human resources has {processed|applied} a salary adjustment effective {date}.|"
     "{The revised statement is attached|Your revised statement is attached} for your records.|"
     "{Please review it|Kindly check the figures} via {url} before the next pay run.|HR Operations"},
    {"p3-delivery", "fluent", "Delivery {could not be completed|attempt unsuccessful}",
     "Dear {name},|{Our courier|The driver} attempted to deliver parcel {ref} on {date}.|"
     "{Nobody was available|The address could not be reached} to receive it.|"
     "{Reschedule the delivery|Choose a new delivery slot} at {url} within {days} days.|Customer Care"},
    {"p3-refund", "fluent", "Your refund of ${amount} is {ready|available}",
     "Hello {name},|{After a review of|Following an audit of} your recent transactions, a refund of ${amount} "
     "was approved.|{To receive the funds|To release the transfer}, {confirm|provide} your banking "
     "information at {url}.|{brand} Refunds"},
    {"p3-banking", "fluent", "Updated banking details for {our next transfer|upcoming payments}",
     "Dear {name},|{Due to an audit|Because of a change in our bank}, our remittance details have changed.|"
     "{Please use the new account|Kindly direct future payments to the new account} listed in the attached "
     "letter.|A confirmation portal is available at {url}.|{agent}, Treasury"},
    {"p3-voicemail", "fluent", "{Voicemail|Voice message} received from {phone}",
     "Hi {name},|You have a new voice message ({days} seconds) from {phone}.|"
     "{The recording is attached|Listen to the recording in the attachment} or {open|play it at} {url}.|"
     "Unified Messaging"},
    {"p3-contract", "fluent", "Contract signature request from {agent}",
     "Hello {name},|{agent} has sent you a contract for electronic signature.|"
     "{The agreement|The document} must be signed by {date}.|{Review and sign|Open the envelope} at {url}.|"
     "eSignature Service"},
};

const Template kHam[] = {
    {"ham-digest", "newsletter", "{brand} weekly digest: {topic}",
     "Hi {name},\n\nHere are this week's most read stories about {topic}, including a long read on team habits "
     "and a short guide to better notes.\nRead online at {url}.\n\nYou receive this newsletter because you "
     "subscribed on our website.\nThe {brand} editors"},
    {"ham-product", "newsletter", "What's new in {brand} {version}",
     "Hello {name},\n\nVersion {version} brings faster search, a redesigned settings page and dark mode.\n"
     "Release notes are at {url}.\n\nCheers,\nThe {brand} team"},
    {"ham-webinar", "newsletter", "Join our webinar on {topic}",
     "Hi {name},\n\nOn {date} our engineers will walk through {topic} with live examples and a Q&A session.\n"
     "Seats are free; details at {url}.\n\nSee you there,\n{agent}"},
    {"ham-notes", "thread", "Re: notes from the {topic} meeting",
     "Thanks {name},\n\nI added the action items from today: {agent} drafts the proposal, I follow up with the "
     "design group, and we meet again on {date}.\nThe shared doc is at {url}.\n\nBest,\n{agent}"},
    {"ham-status", "thread", "Status update for {project}",
     "Hi all,\n\n{project} is on track. We finished the migration, {days} tickets remain for the beta and the "
     "load tests look good.\nDashboard: {url}\n\n{agent}"},
    {"ham-lunch", "thread", "Lunch on {weekday}?",
     "Hey {name},\n\nAre you free for lunch on {weekday}? The new noodle place near the office opened last "
     "week.\nLet me know.\n\n{agent}"},
    {"ham-shipping", "notification", "Your order {ref} has shipped",
     "Hello {name},\n\nGood news, your order {ref} left our warehouse today and should arrive by {date}.\n"
     "Track the parcel at {url}.\n\nThanks for shopping with {brand}"},
    {"ham-calendar", "notification", "Invitation: {topic} sync @ {date}",
     "{agent} invited you to a meeting.\n\nTopic: {topic} sync\nWhen: {date}\nWhere: room {days}\nAgenda and "
     "notes: {url}"},
    {"ham-review", "notification", "[{project}] Pull request #{num}: {topic} cleanup",
     "{agent} requested your review on pull request #{num}.\n\nThe change refactors the {topic} module and "
     "adds tests.\nView it at {url}.\n\nReply to this email or comment on the page."},
    {"ham-travel", "thread", "Trip itinerary for {date}",
     "Hi {name},\n\nAttached below is the itinerary for the offsite: train departs at 08:10, hotel check in "
     "after 15:00, dinner with the {project} team at 19:30.\nMap: {url}\n\n{agent}"},
    {"ham-forum", "newsletter", "{brand} community: new answers on {topic}",
     "Hi {name},\n\nThere are {days} new answers in threads you follow about {topic}.\nCatch up at {url}.\n\n"
     "Community team"},
    {"ham-payment", "transactional", "Payment received for order {ref}",
     "Hello {name},\n\nWe received your payment of ${amount} for order {ref}. A receipt is available in your "
     "account at {url}.\n\nThank you for your business,\n{brand} Billing"},
    {"ham-statement", "transactional", "Your {brand} statement for {month} is available",
     "Dear {name},\n\nYour monthly statement is ready. The balance due on {date} is ${amount}; no action is "
     "needed if automatic payments are enabled.\nView the statement at {url}.\n\n{brand} Customer Service"},
    {"ham-signin", "transactional", "New sign-in to your {brand} account",
     "Hi {name},\n\nWe noticed a new sign-in to your {brand} account from a Windows device on {date}. If this "
     "was you, there is nothing else to do.\nYou can review recent activity at {url}.\n\nThe {brand} security team"},
    {"ham-refund", "transactional", "Refund processed for order {ref}",
     "Hello {name},\n\nA refund of ${amount} for order {ref} was processed today and should appear on your "
     "card within {days} business days.\nDetails: {url}\n\n{brand} Support"},
    {"ham-shared", "transactional", "{agent} shared a document with you",
     "{agent} shared the {topic} document with you and left a comment: please review before {date}.\n"
     "Open the document at {url}.\n\nYou received this email because you are a collaborator."},
    {"ham-subscription", "transactional", "Confirm your subscription to {brand} updates",
     "Hi {name},\n\nPlease confirm that you want to receive {brand} updates about {topic} by opening {url}.\n"
     "If you did not sign up, you can ignore this message.\n\n{brand}"},
    {"ham-thanks", "thread", "Thanks for the help with {topic}",
     "Hi {name},\n\nJust wanted to say thanks for jumping in on the {topic} question yesterday, it saved us a "
     "lot of time.\nNotes are at {url} if anyone asks.\n\nCheers,\n{agent}"},
};

const std::vector<std::string> kMarkers = {"winner",  "prize",  "lottery", "jackpot",  "claim",     "invoice",
                                           "overdue", "unpaid", "urgent",  "password", "suspended", "verify"};

const char* kFirst[] = {"alice", "bruno", "chen",  "dana",  "emeka", "farah", "goran", "hana",  "ivan",  "julia",
                        "kofi",  "lena",  "mateo", "nadia", "omar",  "paula", "quinn", "rosa",  "sven",  "tara",
                        "umar",  "vera",  "wei",   "ximena", "yusuf", "zoe"};
const char* kLast[] = {"adams", "baker", "costa", "diaz",   "evans", "fischer", "garcia", "hughes", "ito",
                       "jensen", "khan", "lopez", "moreau", "novak", "okafor",  "patel",  "quist",  "rossi",
                       "silva", "tanaka"};
const char* kBrands[] = {"Northwind", "Contoso", "Fabrikam", "Globex", "Initech", "Umbrella", "Stark", "Wayne"};
const char* kTopics[] = {"onboarding", "roadmap",  "security review", "budget", "hiring", "analytics",
                         "release",    "pricing",  "infrastructure",  "design", "search", "accessibility"};
const char* kProjects[] = {"Apollo", "Borealis", "Cobalt", "Delta", "Ember", "Falcon", "Granite", "Horizon"};
const char* kWeekdays[] = {"Monday", "Tuesday", "Wednesday", "Thursday", "Friday"};
const char* kMonths[] = {"January", "February", "March", "April", "May", "June",
                         "July", "August", "September", "October", "November", "December"};

const char* kSpamDomains[3][2] = {{"global-lottery-board.com", "intl-prize-center.net"},
                                  {"billing-notice.biz", "accounts-desk.info"},
                                  {"mail-helpdesk.net", "secure-it-portal.com"}};
const char* kLookalikeBases[3][3] = {{"euromi11ions-online", "eur0-lotto-claims", "g1obal-prize-board"},
                                     {"paypa1-billing", "acc0unts-desk", "inv0ice-portal"},
                                     {"rnicrosoft-support", "0utlook-helpdesk", "secure-1ogin"}};
const char* kLookalikeTlds[] = {".com", ".net", ".info", ".top", ".xyz"};
const char* kHomographHosts[] = {"xn--pple-43d.com", "xn--80ak6aa92e.com", "xn--mcrosoft-v7f.com",
                                 "xn--pypal-4ve.com", "xn--gogle-jye.com", "xn--amazn-mye.com"};
const char* kFluentFromDomains[] = {"notify-center.com", "account-services.net", "docs-share.org",
                                    "payments-portal.com", "hr-updates.net", "courier-status.com"};
// Boilerplate lines appended to mail of both classes.
const char* kFiller[] = {
    "Please do not reply to this message.",
    "If you have any questions, contact our support team.",
    "This message was sent to {email}.",
    "To stop receiving these emails, update your preferences at any time.",
    "Sent from my phone.",
    "Our office hours are Monday to Friday, 9am to 5pm.",
    "Thank you for being a valued customer.",
    "Please consider the environment before printing this email.",
    "This email and any attachments are confidential.",
    "Have a great day!",
    "Please keep this email for your records.",
    "We appreciate your business.",
    "Let me know if you need anything else.",
    "More information is available on the help page.",
    "Your feedback helps us improve.",
    "Thank you for your patience.",
    "We look forward to hearing from you.",
    "The details are also listed in your account.",
    "Questions? Our team is available around the clock.",
    "You can manage your notification settings in your account.",
};
// Neutral sentences padded into bodies of both classes.
const char* kNeutral[] = {
    "The team finished the quarterly review last week and the results look steady.",
    "Our new office in the city center opens next month.",
    "We updated the mobile app with a cleaner layout and faster search.",
    "The weather this weekend should be perfect for the company picnic.",
    "Parking on the north side will be closed for maintenance on {weekday}.",
    "A short summary of the {topic} discussion is included below.",
    "The {project} project moved into its testing phase.",
    "Several customers asked about the {topic} roadmap this quarter.",
    "Remember that the holiday schedule starts on {date}.",
    "The cafeteria now offers vegetarian options every day.",
    "Our support hours are extended during the {month} release.",
    "The library of templates was refreshed with {days} new designs.",
    "Thanks again to everyone who joined the {topic} workshop.",
    "We are collecting ideas for the next team offsite.",
    "The annual report will be shared with all staff in {month}.",
    "Traffic on the main website grew steadily over the last {days} weeks.",
    "Please bring your badge when visiting the second floor.",
    "The {brand} community forum has a new section for beginners.",
    "Our partners at {brand} shared positive feedback on the pilot.",
    "The training videos are now available with subtitles.",
    "A new coffee machine was installed in the kitchen.",
    "The {project} dashboard now refreshes every {days} minutes.",
    "We will publish the meeting notes after {weekday}.",
    "Several teams are planning to adopt the new {topic} guidelines.",
    "The printer on the third floor has been replaced.",
    "Local volunteers will visit the office on {weekday} afternoon.",
    "We welcome {agent}, who joins the {topic} group this week.",
    "The survey closes on {date} and takes about {days} minutes.",
    "Our blog featured a story about remote collaboration.",
    "The guest wifi network has a new name.",
};
const char* kNeutralSubjects[] = {
    "Quick update", "Following up", "Checking in", "Information for {name}", "Re: your request",
    "Important update about your account", "Notice for {name}", "Re: {topic}", "Update from {brand}",
    "Hello from {brand}",
};

const char* kFreemail[] = {"freemail.example", "postbox.example", "webinbox.example"};
const char* kHamOrgDomains[] = {"corp.example", "partner-one.com", "partner-two.org"};
const char* kNewsDomains[] = {"northwind-news.com", "contoso.io", "fabrikam.dev", "globex-weekly.org"};
const char* kDecoys[][2] = {{"Invoice_{ref}.pdf.html", "text/html"}, {"document_{ref}.zip", "application/zip"},
                            {"statement_{ref}.htm", "text/html"}, {"voicemail_{ref}.wav.js", "application/javascript"}};

template <typename T, std::size_t N>
const T& pick(Rng& rng, const T (&items)[N]) {
    return items[rng.index(N)];
}

std::string base64(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

bool is_ascii(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; });
}

std::string encode_header(std::string_view value) {
    if (is_ascii(value)) return std::string(value);
    return "=?UTF-8?B?" + base64(value) + "?=";
}

// Expands {a|b} alternatives and {slot} references.
std::string expand(std::string_view pattern, const std::map<std::string, std::string>& slots, Rng& rng) {
    std::string out;
    std::size_t i = 0;
    while (i < pattern.size()) {
        if (pattern[i] != '{') {
            out += pattern[i++];
            continue;
        }
        const std::size_t close = pattern.find('}', i);
        const std::string_view inner = pattern.substr(i + 1, close - i - 1);
        i = close + 1;
        if (inner.find('|') != std::string_view::npos) {
            const auto options = split(inner, '|');
            out += expand(options[rng.index(options.size())], slots, rng);
        } else {
            const auto it = slots.find(std::string(inner));
            out += it == slots.end() ? std::string(inner) : it->second;
        }
    }
    return out;
}

// Splits on '|' outside braces.
std::vector<std::string_view> sentences_of(std::string_view text) {
    std::vector<std::string_view> out;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '{') ++depth;
        else if (text[i] == '}') --depth;
        else if (text[i] == '|' && depth == 0) {
            out.push_back(text.substr(start, i - start));
            start = i + 1;
        }
    }
    out.push_back(text.substr(start));
    return out;
}

std::string person(Rng& rng) { return std::string(pick(rng, kFirst)) + "." + pick(rng, kLast); }

std::string display(const std::string& local) {
    std::string name = local;
    std::replace(name.begin(), name.end(), '.', ' ');
    bool up = true;
    for (char& c : name) {
        if (up && c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
        up = c == ' ';
    }
    return name;
}

std::map<std::string, std::string> make_slots(Rng& rng, std::int64_t ts, const std::string& recipient,
                                              const std::string& url) {
    std::map<std::string, std::string> s;
    s["name"] = display(recipient.substr(0, recipient.find('@')));
    s["email"] = recipient;
    s["agent"] = display(person(rng));
    s["brand"] = pick(rng, kBrands);
    s["topic"] = pick(rng, kTopics);
    s["project"] = pick(rng, kProjects);
    s["weekday"] = pick(rng, kWeekdays);
    s["month"] = pick(rng, kMonths);
    s["amount"] = std::to_string(100 + rng.index(9900)) + "." + std::to_string(10 + rng.index(90));
    s["ref"] = std::to_string(100000 + rng.index(900000));
    s["num"] = std::to_string(100 + rng.index(900));
    s["days"] = std::to_string(2 + rng.index(12));
    s["version"] = std::to_string(1 + rng.index(9)) + "." + std::to_string(rng.index(10));
    s["phone"] = "+1 555 0" + std::to_string(100 + rng.index(900));
    const std::string date = format_rfc5322_date(ts + static_cast<std::int64_t>(86400 * (1 + rng.index(14))));
    s["date"] = date.substr(0, 16);
    s["url"] = url;
    return s;
}

std::string filler(Rng& rng, const std::map<std::string, std::string>& slots) {
    std::string out;
    const std::size_t count = 1 + rng.index(4);
    for (std::size_t i = 0; i < count; ++i) out += "\n" + expand(pick(rng, kFiller), slots, rng);
    return out;
}

std::string padding(Rng& rng, const std::map<std::string, std::string>& slots) {
    std::string out;
    const std::size_t count = 2 + rng.index(5);
    for (std::size_t i = 0; i < count; ++i) out += (i == 0 ? "\n" : " ") + expand(pick(rng, kNeutral), slots, rng);
    return out + "\n";
}

std::string obfuscate_word(std::string_view word, int mode, Rng& rng) {
    // mode 0 leet, 1 zero-width, 2 homoglyph
    const Vocabulary none;
    return mutate_token(word, static_cast<MutationOp>(mode), none, rng);
}

// Obfuscates marker words; the first hit always gets a non-ASCII form.
std::string obfuscate(std::string_view text, Rng& rng, bool& forced_done) {
    std::string out;
    std::size_t last = 0;
    std::vector<std::pair<std::size_t, std::size_t>> urls;
    for (const auto& url : find_urls(text)) {
        for (std::size_t at = text.find(url); at != std::string_view::npos; at = text.find(url, at + 1)) {
            urls.emplace_back(at, at + url.size());
        }
    }
    for (const auto& [b, e] : token_spans(text)) {
        if (std::any_of(urls.begin(), urls.end(), [&](const auto& u) { return b < u.second && e > u.first; })) continue;
        const std::string token = to_lower_ascii(text.substr(b, e - b));
        if (std::find(kMarkers.begin(), kMarkers.end(), token) == kMarkers.end()) continue;
        int mode = static_cast<int>(rng.index(3));
        if (!forced_done) mode = 1 + static_cast<int>(rng.index(2));
        std::string replaced = obfuscate_word(text.substr(b, e - b), mode, rng);
        if (mode == 2 && is_ascii(replaced)) replaced = obfuscate_word(text.substr(b, e - b), 1, rng);
        if (!is_ascii(replaced)) forced_done = true;
        out.append(text.substr(last, b - last));
        out += replaced;
        last = e;
    }
    out.append(text.substr(last));
    return out;
}

std::int64_t draw_time(Rng& rng, const PhaseSpec& spec, bool business_hours) {
    const auto days = static_cast<std::int64_t>(std::max(1.0, spec.window_days));
    std::int64_t day = static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(days)));
    std::int64_t second;
    if (business_hours) {
        // weekdays, 08:00-18:00
        for (int guard = 0; guard < 16; ++guard) {
            const std::int64_t weekday = (((spec.start_epoch / 86400 + day) % 7) + 7 + 3) % 7;
            if (weekday < 5) break;
            day = static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(days)));
        }
        second = 8 * 3600 + static_cast<std::int64_t>(rng.index(10 * 3600));
    } else {
        second = static_cast<std::int64_t>(rng.index(86400));
    }
    return spec.start_epoch + day * 86400 + second;
}

struct Message {
    std::string from_name;
    std::string from;
    std::string to;
    std::string reply_to;
    std::string subject;
    std::string body;
    std::int64_t ts = 0;
    std::string message_id;
    std::string in_reply_to;
    std::string auth;
    bool spam = false;
    std::string campaign;
    std::vector<std::array<std::string, 3>> attachments;  // name, mime, content
};

std::string render(const Message& m) {
    std::string h;
    h += "From: " + m.from_name + " <" + m.from + ">\r\n";
    h += "To: " + m.to + "\r\n";
    if (!m.reply_to.empty()) h += "Reply-To: " + m.reply_to + "\r\n";
    h += "Subject: " + encode_header(m.subject) + "\r\n";
    h += "Date: " + format_rfc5322_date(m.ts) + "\r\n";
    h += "Message-ID: " + m.message_id + "\r\n";
    if (!m.in_reply_to.empty()) h += "In-Reply-To: " + m.in_reply_to + "\r\n";
    h += "Authentication-Results: mx.corp.example; " + m.auth + "\r\n";
    h += std::string("X-Evomail-Label: ") + (m.spam ? "spam" : "ham") + "\r\n";
    h += "X-Evomail-Campaign: " + m.campaign + "\r\n";
    h += "MIME-Version: 1.0\r\n";
    std::string body = m.body;
    std::string crlf;
    for (char c : body) {
        if (c == '\n') crlf += "\r\n";
        else crlf += c;
    }
    if (m.attachments.empty()) {
        h += "Content-Type: text/plain; charset=utf-8\r\nContent-Transfer-Encoding: 8bit\r\n\r\n";
        return h + crlf + "\r\n";
    }
    const std::string boundary = "=_evomail_" + sha256_hex(m.message_id).substr(0, 16);
    h += "Content-Type: multipart/mixed; boundary=\"" + boundary + "\"\r\n\r\n";
    h += "--" + boundary + "\r\nContent-Type: text/plain; charset=utf-8\r\nContent-Transfer-Encoding: 8bit\r\n\r\n";
    h += crlf + "\r\n";
    for (const auto& [name, mime, content] : m.attachments) {
        h += "--" + boundary + "\r\nContent-Type: " + mime + "; name=\"" + name +
             "\"\r\nContent-Disposition: attachment; filename=\"" + name +
             "\"\r\nContent-Transfer-Encoding: base64\r\n\r\n" + base64(content) + "\r\n";
    }
    h += "--" + boundary + "--\r\n";
    return h;
}

std::string recipient(Rng& rng) { return person(rng) + "@corp.example"; }

Message keyword_spam(Rng& rng, const PhaseSpec& spec, const Template& t, std::size_t family, bool obfuscated) {
    Message m;
    m.spam = true;
    m.campaign = t.tag;
    m.ts = draw_time(rng, spec, rng.bernoulli(0.5));
    m.to = recipient(rng);
    std::string domain;
    if (obfuscated) {
        domain = std::string(pick(rng, kLookalikeBases[family])) + std::to_string(rng.index(10)) + pick(rng, kLookalikeTlds);
    } else {
        domain = kSpamDomains[family][rng.index(2)];
    }
    const std::string sender_domain = rng.bernoulli(0.4) ? std::string(pick(rng, kFreemail)) : domain;
    m.from = std::string(pick(rng, kFirst)) + std::to_string(rng.index(100)) + "@" + sender_domain;
    m.from_name = display(person(rng));
    const std::string url = "http://" + domain + "/" + (family == 0 ? "claim" : family == 1 ? "invoice" : "login") +
                            "/" + std::to_string(100000 + rng.index(900000));
    const auto slots = make_slots(rng, m.ts, m.to, url);
    m.subject = expand(rng.bernoulli(0.4) ? pick(rng, kNeutralSubjects) : t.subject, slots, rng);
    m.body = expand(t.body, slots, rng) + padding(rng, slots) + filler(rng, slots);
    if (family == 1 && rng.bernoulli(0.4)) {
        m.attachments.push_back({"invoice_" + slots.at("ref") + ".pdf", "application/pdf", "%PDF-1.4 " + slots.at("ref")});
    }
    if (obfuscated) {
        bool done = false;
        m.subject = obfuscate(m.subject, rng, done);
        m.body = obfuscate(m.body, rng, done);
    }
    m.auth = rng.bernoulli(0.5) ? "spf=none" : "spf=neutral smtp.mailfrom=" + sender_domain;
    m.message_id = "<" + sha256_hex(std::to_string(rng.next())).substr(0, 24) + "@" + sender_domain + ">";
    return m;
}

Message fluent_spam(Rng& rng, const PhaseSpec& spec, const Template& t) {
    Message m;
    m.spam = true;
    m.campaign = t.tag;
    m.ts = draw_time(rng, spec, rng.bernoulli(0.5));
    m.to = recipient(rng);
    const std::string domain = pick(rng, kFluentFromDomains);
    const std::string local = person(rng);
    m.from = local + "@" + domain;
    m.from_name = display(local);
    m.reply_to = "reply." + std::to_string(rng.index(1000)) + "@mailbox-help.net";
    const std::string host = pick(rng, kHomographHosts);
    const std::string url = "https://" + host + "/session/" + sha256_hex(std::to_string(rng.next())).substr(0, 12);
    const auto slots = make_slots(rng, m.ts, m.to, url);
    m.subject = expand(t.subject, slots, rng);
    auto sentences = sentences_of(t.body);
    // greeting first, sign-off last, the middle may be reordered
    if (sentences.size() > 3 && rng.bernoulli(0.5)) {
        std::swap(sentences[1], sentences[1 + 1 + rng.index(sentences.size() - 3)]);
    }
    std::string body;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        body += expand(sentences[i], slots, rng);
        body += i == 0 || i + 2 == sentences.size() ? "\n\n" : (i + 1 == sentences.size() ? "\n" : " ");
    }
    m.body = body;
    m.auth = "spf=fail smtp.mailfrom=" + domain + "; dmarc=fail";
    m.message_id = "<" + sha256_hex(std::to_string(rng.next())).substr(0, 24) + "@" + domain + ">";
    const auto& decoy = pick(rng, kDecoys);
    m.attachments.push_back({expand(decoy[0], slots, rng), decoy[1],
                             "<html><body>document " + slots.at("ref") + "</body></html>"});
    return m;
}

Message ham(Rng& rng, const PhaseSpec& spec, const Template& t, std::vector<std::string>& thread_ids) {
    Message m;
    m.spam = false;
    m.campaign = t.tag;
    m.ts = draw_time(rng, spec, rng.bernoulli(0.75));
    m.to = recipient(rng);
    const std::string family = t.family;
    std::string domain;
    std::string local;
    if (family == "newsletter" || family == "transactional") {
        domain = pick(rng, kNewsDomains);
        local = family == "newsletter" ? "news" : "no-reply";
    } else if (rng.bernoulli(0.4)) {
        domain = pick(rng, kFreemail);
        local = person(rng);
    } else {
        domain = pick(rng, kHamOrgDomains);
        local = person(rng);
    }
    m.from = local + "@" + domain;
    m.from_name = display(local);
    std::string url;
    if (family == "newsletter" || family == "transactional") {
        url = "https://www." + domain + "/read/" + std::to_string(1000 + rng.index(9000));
    } else if (family == "notification") {
        url = "https://app." + std::string(pick(rng, kHamOrgDomains)) + "/items/" + std::to_string(rng.index(100000));
    } else {
        url = "https://docs.corp.example/d/" + sha256_hex(std::to_string(rng.next())).substr(0, 10);
    }
    const auto slots = make_slots(rng, m.ts, m.to, url);
    m.subject = expand(rng.bernoulli(0.3) ? pick(rng, kNeutralSubjects) : t.subject, slots, rng);
    m.body = expand(t.body, slots, rng) + padding(rng, slots) + filler(rng, slots);
    m.auth = "spf=pass smtp.mailfrom=" + domain + "; dkim=pass header.d=" + domain + "; dmarc=pass";
    m.message_id = "<" + sha256_hex(std::to_string(rng.next())).substr(0, 24) + "@" + domain + ">";
    if (family == "thread") {
        if (!thread_ids.empty() && rng.bernoulli(0.5)) m.in_reply_to = thread_ids[rng.index(thread_ids.size())];
        thread_ids.push_back(m.message_id);
    }
    if (t.tag == std::string("ham-statement") && rng.bernoulli(0.4)) {
        m.attachments.push_back({"statement_" + slots.at("ref") + ".pdf", "application/pdf", "%PDF-1.4 " + slots.at("ref")});
    }
    if (t.tag == std::string("ham-travel") || (family == "thread" && rng.bernoulli(0.1))) {
        m.attachments.push_back({"agenda_" + slots.at("num") + ".txt", "text/plain", "agenda for " + slots.at("topic")});
    }
    return m;
}

}  // namespace

std::string_view to_string(Phase phase) {
    switch (phase) {
        case Phase::P1: return "P1";
        case Phase::P2: return "P2";
        case Phase::P3: return "P3";
    }
    return "P1";
}

Phase parse_phase(std::string_view text) {
    const std::string t = to_lower_ascii(trim(text));
    if (t == "p1" || t == "1") return Phase::P1;
    if (t == "p2" || t == "2") return Phase::P2;
    if (t == "p3" || t == "3") return Phase::P3;
    throw ConfigError("unknown phase: " + std::string(text));
}

std::vector<std::string> spam_templates(Phase phase) {
    std::vector<std::string> tags;
    if (phase == Phase::P3) {
        for (const auto& t : kFluentSpam) tags.emplace_back(t.tag);
    } else {
        for (const auto& t : kKeywordSpam) tags.emplace_back(t.tag);
    }
    return tags;
}

const std::vector<std::string>& keyword_markers() { return kMarkers; }

std::vector<std::string> generate_phase_messages(const PhaseSpec& spec) {
    if (spec.n_emails < 0) throw ConfigError("n_emails must be >= 0");
    if (!(spec.spam_ratio > 0.0 && spec.spam_ratio < 1.0)) throw ConfigError("spam_ratio must lie in (0,1)");
    if (!(spec.window_days > 0.0)) throw ConfigError("window_days must be > 0");
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.phase)));
    const int n_spam = static_cast<int>(std::lround(spec.spam_ratio * spec.n_emails));
    std::vector<char> is_spam(static_cast<std::size_t>(spec.n_emails), 0);
    std::fill(is_spam.begin(), is_spam.begin() + n_spam, 1);
    rng.shuffle(is_spam);

    std::vector<std::string> thread_ids;
    std::vector<std::string> out;
    out.reserve(is_spam.size());
    for (std::size_t i = 0; i < is_spam.size(); ++i) {
        Message m;
        if (!is_spam[i]) {
            m = ham(rng, spec, pick(rng, kHam), thread_ids);
        } else if (spec.phase == Phase::P3) {
            m = fluent_spam(rng, spec, pick(rng, kFluentSpam));
        } else {
            const std::size_t idx = rng.index(std::size(kKeywordSpam));
            m = keyword_spam(rng, spec, kKeywordSpam[idx], idx / 4, spec.phase == Phase::P2);
        }
        out.push_back(render(m));
    }
    return out;
}

std::vector<EmailDocument> generate_phase_corpus(const PhaseSpec& spec) {
    std::vector<EmailDocument> docs;
    for (const auto& raw : generate_phase_messages(spec)) docs.push_back(parse_email(raw));
    assign_unique_ids(docs);
    return docs;
}

bool has_attack_marker(const EmailDocument& doc, Phase phase) {
    switch (phase) {
        case Phase::P1: {
            for (const auto& text : {doc.subject, doc.body}) {
                for (const auto& tok : tokenize(text)) {
                    if (std::find(kMarkers.begin(), kMarkers.end(), tok) != kMarkers.end()) return true;
                }
            }
            return false;
        }
        case Phase::P2:
            return !is_ascii(doc.subject) || !is_ascii(doc.body);
        case Phase::P3:
            return doc.reply_to && *doc.reply_to != doc.sender_address && doc.auth.spf == AuthResult::Fail;
    }
    return false;
}

std::string to_mbox(const std::vector<std::string>& messages) {
    std::string out;
    for (const auto& raw : messages) {
        out += "From evomail@localhost Thu Jan  1 00:00:00 1970\n";
        std::size_t pos = 0;
        while (pos < raw.size()) {
            std::size_t eol = raw.find('\n', pos);
            if (eol == std::string::npos) eol = raw.size();
            std::string_view line(raw.data() + pos, eol - pos);
            const std::size_t gt = line.find_first_not_of('>');
            if (gt != std::string_view::npos && line.substr(gt).starts_with("From ")) out += '>';
            out.append(line);
            out += '\n';
            pos = eol + 1;
        }
        out += '\n';
    }
    return out;
}

}  // namespace evomail
