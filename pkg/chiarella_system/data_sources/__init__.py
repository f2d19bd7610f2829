"""Monthly price ingestion and preprocessing"""
