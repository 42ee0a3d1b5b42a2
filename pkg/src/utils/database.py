"""Database utility functions for the run history."""

import json
from datetime import datetime

import sqlite_utils

from .constants import DB_PATH


def setup_database(path=None):
    """Open the result store, creating the runs and results tables if needed."""
    db = sqlite_utils.Database(path or DB_PATH)
    if "runs" not in db.table_names():
        db["runs"].create(
            {
                "id": int,
                "mode": str,
                "config_hash": str,
                "model": str,
                "rows": int,
                "passed": int,
                "wall_clock": float,
                "code_version": str,
                "created": str,
                "record_json": str,
            },
            pk="id",
        )
    if "results" not in db.table_names():
        db["results"].create(
            {
                "id": int,
                "run_id": int,
                "row_index": int,
                "E": float,
                "value": float,
                "uncertainty": float,
                "budget": float,
                "payload": str,
            },
            pk="id",
            foreign_keys=[("run_id", "runs", "id")],
        )
        db["results"].create_index(["run_id"])
    return db


def get_db(path=None):
    """Get a database handle."""
    return sqlite_utils.Database(path or DB_PATH)


def save_record(record, path=None):
    """Store a ResultRecord; returns the new run id."""
    db = setup_database(path)
    model = record.config_echo.get("model", {})
    run_id = db["runs"].insert(
        {
            "mode": record.mode,
            "config_hash": record.config_hash,
            "model": f"N={model.get('N')} J={model.get('J')} g={model.get('g')} h={model.get('h')}",
            "rows": len(record.rows),
            "passed": int(record.passed),
            "wall_clock": record.wall_clock,
            "code_version": record.code_version,
            "created": datetime.now().isoformat(timespec="seconds"),
            "record_json": record.to_json(include_timing=False),
        }
    ).last_pk
    plain = record.to_dict()["rows"]
    db["results"].insert_all(
        {
            "run_id": run_id,
            "row_index": index,
            "E": row.get("E"),
            "value": row.get("value", row.get("measured")),
            "uncertainty": row.get("stderr"),
            "budget": row.get("budget", row.get("bound")),
            "payload": json.dumps(row, sort_keys=True),
        }
        for index, row in enumerate(plain)
    )
    return run_id


def recent_runs(limit=10, path=None):
    db = setup_database(path)
    return list(db["runs"].rows_where(order_by="id desc", limit=limit))


def results_for(run_id, path=None):
    db = setup_database(path)
    return list(db["results"].rows_where("run_id = ?", [run_id], order_by="id"))


def run_totals(path=None):
    """Run counts per mode and the number of failed ed-checks."""
    db = setup_database(path)
    totals = {row["mode"]: row["n"] for row in db.query("select mode, count(*) as n from runs group by mode")}
    failed = next(db.query("select count(*) as n from runs where passed = 0"))["n"]
    return totals, failed
