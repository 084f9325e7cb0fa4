//! Row types and CSV I/O for the two input tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Ground-truth transaction label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "normal")]
    Normal,
    #[serde(rename = "anomalous")]
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

/// One interbank payment message as the hub sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    #[serde(rename = "tx-id")]
    pub tx_id: u64,
    #[serde(rename = "sender-name")]
    pub sender_name: String,
    #[serde(rename = "sender-account")]
    pub sender_account: String,
    #[serde(rename = "sender-bank")]
    pub sender_bank: String,
    #[serde(rename = "sender-street")]
    pub sender_street: String,
    #[serde(rename = "sender-zip")]
    pub sender_zip: String,
    #[serde(rename = "receiver-name")]
    pub receiver_name: String,
    #[serde(rename = "receiver-account")]
    pub receiver_account: String,
    #[serde(rename = "receiver-bank")]
    pub receiver_bank: String,
    /// Amount in the transaction's own currency.
    pub amount: f64,
    pub currency: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub label: Label,
}

/// One bank-held account row. The flag never leaves the owning bank in the
/// protocol; it appears here because banks load their slice from this table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountRecord {
    #[serde(rename = "bank-id")]
    pub bank_id: String,
    #[serde(rename = "account-id")]
    pub account_id: String,
    pub name: String,
    pub street: String,
    pub zip: String,
    /// 0 is the one unflagged status; 1..=12 are flagged.
    pub flag: u8,
}

impl AccountRecord {
    /// The single protocol-relevant bit.
    pub fn flag_bit(&self) -> bool {
        self.flag != 0
    }
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    DataError::CsvParse { line, msg: e.to_string() }
}

pub fn write_transactions_csv(path: &Path, rows: &[TransactionRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transactions_csv(path: &Path) -> Result<Vec<TransactionRecord>, DataError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(csv_error)
}

pub fn write_accounts_csv(path: &Path, rows: &[AccountRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_accounts_csv(path: &Path) -> Result<Vec<AccountRecord>, DataError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(csv_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tx() -> TransactionRecord {
        TransactionRecord {
            tx_id: 1,
            sender_name: "Ann Doe".into(),
            sender_account: "A000001".into(),
            sender_bank: "B00".into(),
            sender_street: "4 Elm St".into(),
            sender_zip: "10001".into(),
            receiver_name: "Bob Roe".into(),
            receiver_account: "A000002".into(),
            receiver_bank: "B01".into(),
            amount: 120.5,
            currency: "USD".into(),
            timestamp: 1_767_225_600,
            label: Label::Normal,
        }
    }

    #[test]
    fn transaction_csv_round_trips_with_hyphenated_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tx.csv");
        let rows = vec![sample_tx()];
        write_transactions_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "tx-id,sender-name,sender-account,sender-bank,sender-street,sender-zip,\
             receiver-name,receiver-account,receiver-bank,amount,currency,timestamp,label"
        ));
        assert!(text.contains(",normal"));
        assert_eq!(read_transactions_csv(&path).unwrap(), rows);
    }

    #[test]
    fn account_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("accounts.csv");
        let rows = vec![AccountRecord {
            bank_id: "B00".into(),
            account_id: "A000001".into(),
            name: "Ann Doe".into(),
            street: "4 Elm St".into(),
            zip: "10001".into(),
            flag: 7,
        }];
        write_accounts_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("bank-id,account-id,name,street,zip,flag"));
        assert_eq!(read_accounts_csv(&path).unwrap(), rows);
        assert!(rows[0].flag_bit());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "bank-id,account-id,name,street,zip,flag\nB00,A1,n,s,z,not-a-number\n",
        )
        .unwrap();
        match read_accounts_csv(&path) {
            Err(DataError::CsvParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected typed csv error, got {other:?}"),
        }
    }
}
